"""Observation encoding, LVCF sequences, synthetic cohorts and ablation sampling.

Class indices per observation: 0 = normal, 1 = abnormal (2-class) or
abnormal-low (3-class), 2 = abnormal-high. One-hot sub-vectors follow the
same order, so a 3-class normal reading encodes as (1, 0, 0).

Times are in hours from admission. A step at prediction time ``t`` sees
inputs observed at or before ``t``; its GPSR targets are the classes
carried forward to ``t + horizon``; its label is 1 when a target event
falls in ``(t, t + horizon]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .archive import dumps_json, load_arrays, save_arrays
from .data_types import EncodedSequence, TaskLayout
from .numkernel import rng_for, sigmoid

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class ObservationSpec:
    id: str
    n_classes: int
    lo: float
    hi: float

    def __post_init__(self):
        if self.n_classes not in (2, 3):
            raise ValueError(f"observation {self.id!r}: class count must be 2 or 3, got {self.n_classes}")
        if not self.lo < self.hi:
            raise ValueError(f"observation {self.id!r}: normal range needs lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class RawEvent:
    observation: str
    time: float
    value: float

    def __post_init__(self):
        if not self.time >= 0:
            raise ValueError(f"event time must be >= 0, got {self.time}")


def class_index(value, spec: ObservationSpec) -> int:
    """Class of a reading, or -1 when the value is missing or NaN."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return -1
    if value < spec.lo:
        return 1
    if value > spec.hi:
        return 2 if spec.n_classes == 3 else 1
    return 0


def _class_indices(values: np.ndarray, spec: ObservationSpec) -> np.ndarray:
    out = np.zeros(values.shape, dtype=np.int64)
    out[values < spec.lo] = 1
    out[values > spec.hi] = 2 if spec.n_classes == 3 else 1
    out[np.isnan(values)] = -1
    return out


def encode_observation(value, spec: ObservationSpec) -> np.ndarray:
    vec = np.zeros(spec.n_classes)
    k = class_index(value, spec)
    if k >= 0:
        vec[k] = 1.0
    return vec


@dataclass
class TaskConfig:
    """How raw timelines become prediction steps."""

    horizon: float = 1.0
    interval: float = 1.0
    holdout: float = 0.0
    gpsr_exclude: tuple = ()

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon: must be positive, got {self.horizon}")
        if not self.interval > 0:
            raise ValueError(f"interval: must be positive, got {self.interval}")
        if self.holdout < 0:
            raise ValueError(f"holdout: must be >= 0, got {self.holdout}")
        self.gpsr_exclude = tuple(self.gpsr_exclude)


def task_layout(specs, exclude=()) -> TaskLayout:
    exclude = set(exclude)
    return TaskLayout(tuple((s.id, s.n_classes) for s in specs if s.id not in exclude))


def input_width(specs) -> int:
    return sum(s.n_classes for s in specs)


def _group_events(events, specs):
    known = {s.id for s in specs}
    grouped = {s.id: ([], []) for s in specs}
    for ev in events:
        if ev.observation not in known:
            raise ValueError(f"unknown observation id {ev.observation!r}")
        if ev.value is None or math.isnan(ev.value):
            continue
        grouped[ev.observation][0].append(ev.time)
        grouped[ev.observation][1].append(ev.value)
    out = {}
    for oid, (ts, vs) in grouped.items():
        ts = np.asarray(ts, dtype=np.float64)
        vs = np.asarray(vs, dtype=np.float64)
        order = np.argsort(ts, kind="stable")
        out[oid] = (ts[order], vs[order])
    return out


def lvcf_encode(grouped: dict, specs, times, horizon: float, gpsr_tasks=None):
    """LVCF inputs and GPSR targets from per-observation (times, values) arrays."""
    times = np.asarray(times, dtype=np.float64)
    T = len(times)
    inputs = np.zeros((T, input_width(specs)))
    gpsr_ids = [s.id for s in specs] if gpsr_tasks is None else list(gpsr_tasks)
    task_col = {oid: r for r, oid in enumerate(gpsr_ids)}
    gpsr = np.zeros((T, len(gpsr_ids)), dtype=np.int64)
    col = 0
    for spec in specs:
        ts, vs = grouped.get(spec.id, (np.empty(0), np.empty(0)))
        if ts.size:
            cls = _class_indices(vs, spec)
            idx = np.searchsorted(ts, times, side="right") - 1
            seen = idx >= 0
            inputs[np.nonzero(seen)[0], col + cls[idx[seen]]] = 1.0
            if spec.id in task_col:
                idx_h = np.searchsorted(ts, times + horizon, side="right") - 1
                gpsr[:, task_col[spec.id]] = np.where(idx_h >= 0, cls[np.maximum(idx_h, 0)], 0)
        col += spec.n_classes
    return inputs, gpsr


def lvcf_sequence(events, specs, prediction_times, horizon: float, gpsr_tasks=None):
    """Encode raw events at each prediction time.

    Returns ``(inputs, gpsr_targets)``. Inputs use the latest reading at or
    before ``t`` and stay all-zero for never-observed variables; GPSR
    targets use the latest reading at or before ``t + horizon`` and fall back
    to the normal class.
    """
    return lvcf_encode(_group_events(events, specs), specs, prediction_times, horizon, gpsr_tasks)


def window_labels(prediction_times, event_times, horizon: float) -> np.ndarray:
    t = np.asarray(prediction_times, dtype=np.float64)
    ev = np.sort(np.asarray(event_times, dtype=np.float64))
    if ev.size == 0:
        return np.zeros(t.shape, dtype=np.int8)
    after = np.searchsorted(ev, t, side="right")
    upto = np.searchsorted(ev, t + horizon, side="right")
    return (upto > after).astype(np.int8)


def holdout_mask(prediction_times, event_times, holdout: float) -> np.ndarray:
    t = np.asarray(prediction_times, dtype=np.float64)
    keep = np.ones(t.shape, dtype=bool)
    if holdout <= 0:
        return keep
    for e in np.asarray(event_times, dtype=np.float64):
        keep &= ~((t > e) & (t <= e + holdout))
    return keep


def apply_holdout_mask(seq: EncodedSequence, event_times, holdout: float) -> EncodedSequence:
    """Invalidate steps whose time lies in ``(event, event + holdout]``."""
    if holdout < 0:
        raise ValueError(f"holdout must be >= 0, got {holdout}")
    if holdout == 0 or len(event_times) == 0:
        return seq
    return seq.replace(mask=seq.mask & holdout_mask(seq.times, event_times, holdout))


def prediction_grid(end_time: float, task: TaskConfig) -> np.ndarray:
    """Times k*interval (k >= 1) whose horizon window ends by ``end_time``."""
    n = int(math.floor((end_time - task.horizon) / task.interval + 1e-9))
    return task.interval * np.arange(1, max(n, 0) + 1, dtype=np.float64)


def build_sequence(admission_id, grouped: dict, label_times, specs, task: TaskConfig, end_time: float,
                   gpsr_tasks=None) -> EncodedSequence | None:
    times = prediction_grid(end_time, task)
    if times.size == 0:
        return None
    inputs, gpsr = lvcf_encode(grouped, specs, times, task.horizon, gpsr_tasks)
    labels = window_labels(times, label_times, task.horizon)
    mask = holdout_mask(times, label_times, task.holdout)
    return EncodedSequence(str(admission_id), times, inputs, labels, gpsr, mask)


# --- cohorts -----------------------------------------------------------------


@dataclass
class Cohort:
    splits: dict
    specs: tuple
    task: TaskConfig
    meta: dict = field(default_factory=dict)

    @property
    def layout(self) -> TaskLayout:
        return task_layout(self.specs, self.task.gpsr_exclude)

    @property
    def d_in(self) -> int:
        return input_width(self.specs)

    def split_stats(self, name: str) -> dict:
        seqs = self.splits[name]
        pos = sum(s.n_pos for s in seqs)
        neg = sum(s.n_neg for s in seqs)
        return {
            "Adms": len(seqs),
            "#Pos": pos,
            "#Neg": neg,
            "Prior": pos / (pos + neg) if pos + neg else 0.0,
        }

    def statistics(self) -> dict:
        return {name: self.split_stats(name) for name in SPLITS if name in self.splits}

    def statistics_table(self) -> str:
        lines = ["split,Adms,#Pos,#Neg,Prior"]
        for name, st in self.statistics().items():
            lines.append(f"{name},{st['Adms']},{st['#Pos']},{st['#Neg']},{st['Prior']:.6f}")
        return "\n".join(lines) + "\n"

    def with_splits(self, **splits) -> "Cohort":
        new = dict(self.splits)
        new.update(splits)
        return Cohort(new, self.specs, self.task, dict(self.meta))


def _check_disjoint(splits: dict):
    seen = {}
    for name, seqs in splits.items():
        for s in seqs:
            if s.admission_id in seen:
                raise ValueError(
                    f"admission {s.admission_id!r} appears in both {seen[s.admission_id]!r} and {name!r}"
                )
            seen[s.admission_id] = name


# --- synthetic generator ----------------------------------------------------


@dataclass
class SyntheticConfig:
    """Planted-signal cohort: an AR(1) severity drives both labs and the event.

    Per admission, hourly severity is ``s_u = offset + z_u`` with
    ``z_u = rho * z_{u-1} + noise * eps``. Each variable reads abnormal with
    probability ``sigmoid(bias_j + signal * w_j * s_u)``; the target event
    fires in hour ``u`` with probability ``sigmoid(hazard_bias + target_gain * s_u)``.
    ``hazard_bias`` is solved so the expected step prior equals ``target_prior``.
    """

    n_obs: int = 20
    n_classes: int = 3
    n_train: int = 2000
    n_valid: int = 500
    n_test: int = 1000
    min_steps: int = 10
    max_steps: int = 30
    interval: int = 1
    horizon: int = 1
    holdout: float = 0.0
    rho: float = 0.9
    noise: float = 0.45
    severity_sd: float = 0.6
    signal: float = 1.5
    measure_prob: float = 0.5
    obs_bias: float = -2.0
    target_gain: float = 2.0
    target_prior: float = 0.0084
    prior_band: float = 0.3
    gpsr_exclude: tuple = ()
    seed: int = 0

    def __post_init__(self):
        def bad(name, why):
            raise ValueError(f"{name}: {why} (got {getattr(self, name)!r})")

        if self.n_obs < 1:
            bad("n_obs", "must be >= 1")
        if self.n_classes not in (2, 3):
            bad("n_classes", "must be 2 or 3")
        for name in ("n_train", "n_valid", "n_test"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        if not 1 <= self.min_steps <= self.max_steps:
            bad("min_steps", "need 1 <= min_steps <= max_steps")
        for name in ("interval", "horizon"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                bad(name, "must be a positive whole number of hours")
        if self.holdout < 0:
            bad("holdout", "must be >= 0")
        if not 0.0 <= self.rho < 1.0:
            bad("rho", "must lie in [0, 1)")
        for name in ("noise", "severity_sd", "signal", "target_gain"):
            if getattr(self, name) < 0:
                bad(name, "must be >= 0")
        if not 0.0 < self.measure_prob <= 1.0:
            bad("measure_prob", "must lie in (0, 1]")
        if not 0.0 < self.target_prior < 1.0:
            bad("target_prior", "must lie in (0, 1)")
        if not 0.0 < self.prior_band:
            bad("prior_band", "must be positive")
        self.interval = int(self.interval)
        self.horizon = int(self.horizon)
        self.gpsr_exclude = tuple(self.gpsr_exclude)

    @property
    def task(self) -> TaskConfig:
        return TaskConfig(horizon=float(self.horizon), interval=float(self.interval),
                          holdout=float(self.holdout), gpsr_exclude=self.gpsr_exclude)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gpsr_exclude"] = list(self.gpsr_exclude)
        return d


def _latent_paths(rng, n_hours: int, config: SyntheticConfig, n: int = 1) -> np.ndarray:
    stat_sd = config.noise / math.sqrt(1.0 - config.rho ** 2) if config.noise > 0 else 0.0
    z = np.empty((n, n_hours))
    z[:, 0] = stat_sd * rng.standard_normal(n)
    eps = rng.standard_normal((n, n_hours))
    for u in range(1, n_hours):
        z[:, u] = config.rho * z[:, u - 1] + config.noise * eps[:, u]
    offset = config.severity_sd * rng.standard_normal((n, 1))
    return z + offset


def calibrate_hazard_bias(config: SyntheticConfig, n_paths: int = 200_000) -> float:
    """Hazard intercept whose expected window prior matches ``target_prior``.

    Uses a fixed pilot sample (independent of the cohort seed), so every
    seed of one config shares the same event model.
    """
    H = config.horizon
    rng = rng_for(0, "hazard-calibration")
    s = _latent_paths(rng, H, config, n_paths)

    def excess(b):
        p_hour = sigmoid(b + config.target_gain * s)
        return float(np.mean(1.0 - np.prod(1.0 - p_hour, axis=1))) - config.target_prior

    return float(brentq(excess, -60.0, 20.0, xtol=1e-12))


def observation_specs(config: SyntheticConfig, rng=None) -> tuple:
    rng = rng or rng_for(config.seed, "synthetic", "specs")
    lo = np.round(rng.uniform(1.0, 100.0, config.n_obs), 2)
    width = np.round(rng.uniform(1.0, 50.0, config.n_obs), 2)
    return tuple(
        ObservationSpec(f"obs{j:02d}", config.n_classes, float(lo[j]), float(lo[j] + width[j]))
        for j in range(config.n_obs)
    )


def simulate_admission(rng, config: SyntheticConfig, specs, obs_w, obs_q, hazard_bias: float):
    """Raw timeline for one admission: grouped readings, event times, end time, latent path."""
    n_steps = int(rng.integers(config.min_steps, config.max_steps + 1))
    end = n_steps * config.interval + config.horizon
    hours = np.arange(end + 1, dtype=np.float64)
    s = _latent_paths(rng, end + 1, config)[0]
    J = len(specs)
    measured = rng.random((J, end + 1)) < config.measure_prob
    p_abn = sigmoid(config.obs_bias + config.signal * obs_w[:, None] * s[None, :])
    abnormal = rng.random((J, end + 1)) < p_abn
    high = rng.random((J, end + 1)) < obs_q[:, None]
    frac = rng.uniform(0.01, 0.99, (J, end + 1))
    grouped = {}
    for j, spec in enumerate(specs):
        width = spec.hi - spec.lo
        vals = np.where(
            abnormal[j],
            np.where(high[j], spec.hi + frac[j] * width, spec.lo - frac[j] * width),
            spec.lo + frac[j] * width,
        )
        sel = measured[j]
        grouped[spec.id] = (hours[sel], vals[sel])
    p_event = sigmoid(hazard_bias + config.target_gain * s)
    fired = rng.random(end + 1) < p_event
    fired[0] = False
    return grouped, hours[fired], float(end), s


def generate_raw_cohort(config: SyntheticConfig):
    """Raw timelines per split: ``{split: [(id, grouped, event_times, end, latent), ...]}``."""
    specs = observation_specs(config)
    world = rng_for(config.seed, "synthetic", "world")
    obs_w = world.uniform(0.5, 1.5, config.n_obs)
    obs_q = world.uniform(0.2, 0.8, config.n_obs)
    hazard_bias = calibrate_hazard_bias(config)
    raw = {}
    sizes = {"train": config.n_train, "valid": config.n_valid, "test": config.n_test}
    for split in SPLITS:
        items = []
        for k in range(sizes[split]):
            rng = rng_for(config.seed, "synthetic", split, k)
            adm_id = f"{split}{k:06d}"
            items.append((adm_id, *simulate_admission(rng, config, specs, obs_w, obs_q, hazard_bias)))
        raw[split] = items
    return specs, hazard_bias, raw


def generate_synthetic_cohort(config: SyntheticConfig, return_latent: bool = False):
    """Sample a cohort whose GPSR tasks carry information about the target.

    With ``return_latent`` also returns ``{admission id: severity at each
    step's window end}`` for oracle checks.
    """
    specs, hazard_bias, raw = generate_raw_cohort(config)
    task = config.task
    layout_ids = [oid for oid, _ in task_layout(specs, task.gpsr_exclude).tasks]
    splits, latent = {}, {}
    for split, items in raw.items():
        seqs = []
        for adm_id, grouped, events, end, s in items:
            seq = build_sequence(adm_id, grouped, events, specs, task, end, layout_ids)
            if seq is None or seq.n_valid == 0:
                continue
            seqs.append(seq)
            latent[adm_id] = s[(seq.times + task.horizon).astype(int)]
        splits[split] = seqs
    _check_disjoint(splits)
    cohort = Cohort(splits, specs, task, {
        "source": "synthetic",
        "synthetic": config.to_dict(),
        "hazard_bias": hazard_bias,
    })
    st = cohort.split_stats("train")
    if st["#Pos"] == 0:
        raise ValueError(f"synthetic train split has no positives (realized prior {st['Prior']})")
    lo = config.target_prior * (1 - config.prior_band)
    hi = config.target_prior * (1 + config.prior_band)
    cohort.meta["train_prior_in_band"] = bool(lo <= st["Prior"] <= hi)
    if return_latent:
        return cohort, latent
    return cohort


def write_raw_csv(config: SyntheticConfig, directory) -> None:
    """Write the synthetic cohort in the CSV ingestion schema (one folder per split)."""
    specs, _, raw = generate_raw_cohort(config)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_specs_csv(specs, directory / "observations.csv")
    for split, items in raw.items():
        d = directory / split
        d.mkdir(exist_ok=True)
        with open(d / "events.csv", "w", newline="") as fe, open(d / "labels.csv", "w", newline="") as fl, \
                open(d / "admissions.csv", "w", newline="") as fa:
            we, wl, wa = csv.writer(fe), csv.writer(fl), csv.writer(fa)
            we.writerow(EVENT_COLUMNS)
            wl.writerow(LABEL_COLUMNS)
            wa.writerow(ADMISSION_COLUMNS)
            for adm_id, grouped, events, end, _ in items:
                rows = [(t, oid, v) for oid, (ts, vs) in grouped.items() for t, v in zip(ts, vs)]
                rows.sort(key=lambda r: (r[0], r[1]))
                for t, oid, v in rows:
                    we.writerow([adm_id, oid, repr(float(t)), repr(float(v))])
                for e in events:
                    wl.writerow([adm_id, repr(float(e))])
                wa.writerow([adm_id, repr(end)])


# --- ablation sampling ------------------------------------------------------


def _retain_count(fraction: float, n: int) -> int:
    return int(math.floor(fraction * n + 0.5))


def _check_fraction(fraction):
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")


def positive_admissions(seqs) -> list:
    return [s.admission_id for s in seqs if s.n_pos > 0]


def reduction_order(ids, seed: int, purpose: str, split: str, iteration: int) -> list:
    """The per-iteration permutation whose prefixes define every fraction."""
    perm = rng_for(seed, purpose, split, iteration).permutation(len(ids))
    return [ids[i] for i in perm]


def reduce_prior(cohort: Cohort, fraction: float, seed: int, iteration: int) -> Cohort:
    """Keep ``round(fraction * n)`` positive admissions in train and valid.

    Dropped admissions keep their negative steps; their positive steps are
    masked out. Test is untouched. Retained ids are recorded in
    ``meta["retained"]``.
    """
    _check_fraction(fraction)
    new, retained = {}, {}
    for split in ("train", "valid"):
        seqs = cohort.splits[split]
        pos_ids = positive_admissions(seqs)
        n_keep = _retain_count(fraction, len(pos_ids))
        if n_keep == 0:
            raise ValueError(f"fraction {fraction} leaves no positive admissions in {split}")
        keep = set(reduction_order(pos_ids, seed, "reduce-prior", split, iteration)[:n_keep])
        out = []
        for s in seqs:
            if s.n_pos > 0 and s.admission_id not in keep:
                s = s.replace(mask=s.mask & (s.labels == 0))
                if s.n_valid == 0:
                    continue
            out.append(s)
        new[split] = out
        retained[split] = sorted(keep)
    reduced = cohort.with_splits(**new)
    reduced.meta["reduction"] = {"kind": "prior", "fraction": fraction, "seed": seed,
                                 "iteration": iteration, "retained": retained}
    return reduced


def reduce_samples(cohort: Cohort, fraction: float, seed: int, iteration: int) -> Cohort:
    """Keep ``round(fraction * n)`` admissions of train and valid regardless of label."""
    _check_fraction(fraction)
    new, retained = {}, {}
    for split in ("train", "valid"):
        seqs = cohort.splits[split]
        ids = [s.admission_id for s in seqs]
        n_keep = _retain_count(fraction, len(ids))
        keep = set(reduction_order(ids, seed, "reduce-samples", split, iteration)[:n_keep])
        out = [s for s in seqs if s.admission_id in keep]
        if sum(s.n_pos for s in out) == 0:
            raise ValueError(f"fraction {fraction} leaves no positive steps in {split}")
        new[split] = out
        retained[split] = sorted(keep)
    reduced = cohort.with_splits(**new)
    reduced.meta["reduction"] = {"kind": "samples", "fraction": fraction, "seed": seed,
                                 "iteration": iteration, "retained": retained}
    return reduced


# --- CSV ingestion ----------------------------------------------------------

EVENT_COLUMNS = ("admission_id", "observation_id", "time", "value")
LABEL_COLUMNS = ("admission_id", "event_time")
ADMISSION_COLUMNS = ("admission_id", "end_time")
SPEC_COLUMNS = ("observation_id", "n_classes", "lo", "hi")


class CsvFormatError(ValueError):
    pass


def _read_rows(path, columns):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != tuple(columns):
            raise CsvFormatError(f"{path}:1: expected header {','.join(columns)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise CsvFormatError(f"{path}:{lineno}: expected {len(columns)} fields, got {len(row)}")
            yield lineno, row


def _float(path, lineno, text, name):
    try:
        v = float(text)
    except ValueError:
        raise CsvFormatError(f"{path}:{lineno}: {name} is not a number: {text!r}") from None
    return v


def write_specs_csv(specs, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SPEC_COLUMNS)
        for s in specs:
            w.writerow([s.id, s.n_classes, repr(s.lo), repr(s.hi)])


def read_specs_csv(path) -> tuple:
    specs = []
    for lineno, (oid, k, lo, hi) in _read_rows(path, SPEC_COLUMNS):
        try:
            specs.append(ObservationSpec(oid, int(k), _float(path, lineno, lo, "lo"), _float(path, lineno, hi, "hi")))
        except ValueError as exc:
            raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
    return tuple(specs)


def load_split_csv(events_path, labels_path, specs, task: TaskConfig, admissions_path=None):
    known = {s.id for s in specs}
    timelines: dict = {}
    for lineno, (adm, oid, t, v) in _read_rows(events_path, EVENT_COLUMNS):
        if oid not in known:
            raise CsvFormatError(f"{events_path}:{lineno}: unknown observation id {oid!r}")
        t = _float(events_path, lineno, t, "time")
        if t < 0:
            raise CsvFormatError(f"{events_path}:{lineno}: negative time {t}")
        v = _float(events_path, lineno, v, "value") if v.strip() else float("nan")
        timelines.setdefault(adm, []).append(RawEvent(oid, t, v))
    labels: dict = {}
    for lineno, (adm, t) in _read_rows(labels_path, LABEL_COLUMNS):
        labels.setdefault(adm, []).append(_float(labels_path, lineno, t, "event_time"))
    ends = {}
    if admissions_path is not None and Path(admissions_path).exists():
        for lineno, (adm, end) in _read_rows(admissions_path, ADMISSION_COLUMNS):
            ends[adm] = _float(admissions_path, lineno, end, "end_time")
    layout_ids = [oid for oid, _ in task_layout(specs, task.gpsr_exclude).tasks]
    seqs = []
    for adm in sorted(set(timelines) | set(ends)):
        evs = timelines.get(adm, [])
        lab = labels.get(adm, [])
        end = ends.get(adm, max([e.time for e in evs] + list(lab) + [0.0]))
        seq = build_sequence(adm, _group_events(evs, specs), lab, specs, task, end, layout_ids)
        if seq is not None and seq.n_valid > 0:
            seqs.append(seq)
    return seqs


def load_cohort_csv(directory, task: TaskConfig, specs=None) -> Cohort:
    """Build a cohort from ``<dir>/{train,valid,test}/{events,labels}.csv``.

    ``observations.csv`` in ``directory`` supplies the observation specs when
    ``specs`` is not given; ``admissions.csv`` per split (optional) fixes
    each admission's end time, otherwise the last event or label time is used.
    """
    directory = Path(directory)
    if specs is None:
        specs = read_specs_csv(directory / "observations.csv")
    splits = {}
    for split in SPLITS:
        d = directory / split
        splits[split] = load_split_csv(d / "events.csv", d / "labels.csv", specs, task, d / "admissions.csv")
    _check_disjoint(splits)
    return Cohort(splits, tuple(specs), task, {"source": str(directory)})


# --- archive ----------------------------------------------------------------


def save_cohort(cohort: Cohort, directory) -> None:
    """Persist a cohort as ``cohort.zip`` plus ``meta.json`` and ``statistics.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {}
    ids = {}
    for split, seqs in cohort.splits.items():
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        R = cohort.layout.n_tasks
        arrays[f"{split}.lengths"] = lengths
        arrays[f"{split}.times"] = np.concatenate([s.times for s in seqs]) if seqs else np.zeros(0)
        arrays[f"{split}.inputs"] = np.concatenate([s.inputs for s in seqs]) if seqs else np.zeros((0, cohort.d_in))
        arrays[f"{split}.labels"] = np.concatenate([s.labels for s in seqs]) if seqs else np.zeros(0, np.int8)
        arrays[f"{split}.gpsr"] = np.concatenate([s.gpsr for s in seqs]) if seqs else np.zeros((0, R), np.int64)
        arrays[f"{split}.mask"] = np.concatenate([s.mask for s in seqs]) if seqs else np.zeros(0, bool)
        ids[split] = [s.admission_id for s in seqs]
    meta = {
        "specs": [asdict(s) for s in cohort.specs],
        "task": {**asdict(cohort.task), "gpsr_exclude": list(cohort.task.gpsr_exclude)},
        "admission_ids": ids,
        "meta": cohort.meta,
    }
    save_arrays(directory / "cohort.zip", arrays, meta)
    (directory / "meta.json").write_text(dumps_json({k: v for k, v in meta.items() if k != "admission_ids"}))
    (directory / "statistics.csv").write_text(cohort.statistics_table())


def load_cohort(directory) -> Cohort:
    directory = Path(directory)
    path = directory / "cohort.zip"
    if not path.exists():
        raise FileNotFoundError(f"no cohort archive at {path}")
    arrays, meta = load_arrays(path)
    specs = tuple(ObservationSpec(**s) for s in meta["specs"])
    task = TaskConfig(**meta["task"])
    splits = {}
    for split, ids in meta["admission_ids"].items():
        bounds = np.concatenate([[0], np.cumsum(arrays[f"{split}.lengths"])])
        seqs = []
        for k, adm in enumerate(ids):
            a, b = bounds[k], bounds[k + 1]
            seqs.append(EncodedSequence(
                adm, arrays[f"{split}.times"][a:b], arrays[f"{split}.inputs"][a:b],
                arrays[f"{split}.labels"][a:b], arrays[f"{split}.gpsr"][a:b], arrays[f"{split}.mask"][a:b],
            ))
        splits[split] = seqs
    return Cohort(splits, specs, task, meta.get("meta", {}))
