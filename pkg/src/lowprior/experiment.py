"""Training with early stopping, two-phase baselines, p sweeps and ablation studies."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .archive import dumps_json, load_arrays, save_arrays
from .data import Cohort, reduce_prior, reduce_samples
from .data_types import TaskLayout
from .metrics import MetricError, auprc, auroc
from .model import (
    EMB_BLOCKS, GPSR_BLOCKS, LSTM_BLOCKS, RESIDUAL_BLOCKS, TARGET_BLOCKS,
    ArchitectureConfig, Network, build_architecture, forward, backward, pack_batch, predict_scores,
)
from .numkernel import RngStream
from .optim import AdamWState, OptimConfig, adamw_step

log = logging.getLogger(__name__)

TWO_PHASE_KINDS = ("Embedding", "Residual")
DEFAULT_P_GRID = tuple(round(0.1 * k, 1) for k in range(11))


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    tolerance: float = 1e-4
    p: float = 0.9
    seed: int = 0
    optim: OptimConfig = field(default_factory=OptimConfig)

    def __post_init__(self):
        if isinstance(self.optim, dict):
            self.optim = OptimConfig(**self.optim)
        if self.batch_size < 1:
            raise ValueError(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs: must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience: must be >= 1, got {self.patience}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p: must lie in [0, 1], got {self.p}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optim"]["decay_exempt"] = list(self.optim.decay_exempt)
        return d


@dataclass
class RunHistory:
    criterion: str
    train_loss: list = field(default_factory=list)
    valid_auroc: list = field(default_factory=list)
    valid_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    model: str
    kind: str
    p: float
    seed: int
    cohort: str = ""
    split: str = "test"
    study: str = ""
    fraction: float = 1.0
    iteration: int = 0
    auroc: float | None = None
    auprc: float | None = None
    prior: float = 0.0
    n_pos: int = 0
    n_neg: int = 0
    note: str = ""
    scores: np.ndarray | None = field(default=None, repr=False)
    labels: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("scores")
        d.pop("labels")
        return d


@dataclass
class ModelSpec:
    """One entry of a comparison: a named architecture with its loss weight."""

    name: str
    arch: ArchitectureConfig
    p: float = 1.0


# --- core loop ---------------------------------------------------------------


def _trainable_blocks(net: Network, trainable):
    return list(net.params) if trainable is None else [n for n in net.params if n in set(trainable)]


def mean_loss(net: Network, seqs, p: float, chunk: int = 256) -> float:
    """Eval-mode loss averaged over sequences."""
    total = 0.0
    for k in range(0, len(seqs), chunk):
        part = seqs[k:k + chunk]
        loss, _ = forward(net, pack_batch(part), p=p, mode="eval")
        total += loss * len(part)
    return total / len(seqs)


def valid_auroc(net: Network, seqs) -> float:
    scores, labels = predict_scores(net, seqs)
    return auroc(scores, labels)


def train(net: Network, cohort: Cohort, config: TrainConfig, *, p: float | None = None,
          trainable=None, criterion: str = "auroc", phase: str = "main"):
    """Mini-batch AdamW with early stopping; returns ``(best network, history)``.

    ``criterion="auroc"`` keeps the epoch with the highest validation AUROC
    and stops after ``patience`` epochs without a strict improvement.
    ``criterion="loss"`` keeps the lowest validation loss and stops after
    ``patience`` epochs improving by less than ``config.tolerance``.
    """
    p = config.p if p is None else p
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"loss weight p must lie in [0, 1], got {p}")
    if criterion not in ("auroc", "loss"):
        raise ValueError(f"unknown stopping criterion {criterion!r}")
    train_seqs = [s for s in cohort.splits["train"] if s.n_valid > 0]
    valid_seqs = [s for s in cohort.splits["valid"] if s.n_valid > 0]
    if not train_seqs or not valid_seqs:
        raise ValueError("train and valid splits must be nonempty")
    if criterion == "auroc":
        v_pos = sum(s.n_pos for s in valid_seqs)
        v_neg = sum(s.n_neg for s in valid_seqs)
        if v_pos == 0 or v_neg == 0:
            raise ValueError(f"validation split is single-class (positives={v_pos}, negatives={v_neg})")

    net = net.copy()
    names = _trainable_blocks(net, trainable)
    state = AdamWState()
    hist = RunHistory(criterion=criterion)
    root = RngStream(config.seed).child("train", phase)
    best_params = None
    best_score = None
    stale = 0
    n = len(train_seqs)
    for epoch in range(config.max_epochs):
        order = root.child("shuffle", epoch).generator().permutation(n)
        epoch_loss = 0.0
        for k, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            batch = pack_batch([train_seqs[i] for i in idx])
            loss, cache = forward(net, batch, p=p, mode="train", rng=root.child("batch", epoch, k))
            grads = backward(net, batch, cache)
            adamw_step(net.params, grads, state, config.optim, only=names)
            epoch_loss += loss * len(idx)
        hist.train_loss.append(epoch_loss / n)

        if criterion == "auroc":
            score = valid_auroc(net, valid_seqs)
            hist.valid_auroc.append(score)
            improved = best_score is None or score > best_score
        else:
            score = mean_loss(net, valid_seqs, p)
            hist.valid_loss.append(score)
            improved = best_score is None or best_score - score > config.tolerance
        log.debug("%s epoch %d: train loss %.6f, valid %s %.6f", phase, epoch, hist.train_loss[-1], criterion, score)
        if improved:
            best_score = score
            best_params = {k_: v.copy() for k_, v in net.params.items()}
            hist.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                hist.stop_reason = f"no improvement for {config.patience} epochs"
                break
    if not hist.stop_reason:
        hist.stop_reason = "max epochs"
    net.params = best_params
    return net, hist


def train_model(spec: ModelSpec, cohort: Cohort, config: TrainConfig, phase1: Network | None = None):
    """Train any architecture; two-phase kinds dispatch to :func:`train_two_phase`."""
    if spec.arch.kind in TWO_PHASE_KINDS:
        return train_two_phase(spec.arch, cohort, config, pretrained=phase1)
    net = build_architecture(spec.arch, cohort.layout, config.seed)
    net, hist = train(net, cohort, config, p=spec.p)
    return net, {"main": hist}


def train_phase1(arch: ArchitectureConfig, cohort: Cohort, config: TrainConfig):
    """GPSR-only pre-training of the shared trunk (stopping on validation loss)."""
    emb_arch = replace(arch, kind="Embedding")
    net = build_architecture(emb_arch, cohort.layout, config.seed)
    return train(net, cohort, config, p=0.0, trainable=LSTM_BLOCKS + EMB_BLOCKS + GPSR_BLOCKS,
                 criterion="loss", phase="phase1")


def train_two_phase(arch: ArchitectureConfig, cohort: Cohort, config: TrainConfig,
                    pretrained: Network | None = None):
    """GPSR pre-training followed by supervised training of the target path.

    Embedding updates only the target layer in phase 2. Residual starts
    from the phase-1 network, adds a residual path from the raw inputs, and
    updates target layer, residual path and embedding while the LSTM stays
    frozen. ``pretrained`` reuses an existing phase-1 network.
    """
    if arch.kind not in TWO_PHASE_KINDS:
        raise ValueError(f"two-phase training applies to {TWO_PHASE_KINDS}, not {arch.kind!r}")
    histories = {}
    if pretrained is None:
        pretrained, histories["phase1"] = train_phase1(arch, cohort, config)
    net = build_architecture(arch, cohort.layout, config.seed)
    for name in LSTM_BLOCKS + EMB_BLOCKS + GPSR_BLOCKS:
        net.params[name] = pretrained.params[name].copy()
    if arch.kind == "Embedding":
        trainable = TARGET_BLOCKS
    else:
        trainable = TARGET_BLOCKS + RESIDUAL_BLOCKS + EMB_BLOCKS
    net, histories["phase2"] = train(net, cohort, config, p=1.0, trainable=trainable, phase="phase2")
    return net, histories


# --- evaluation --------------------------------------------------------------


def evaluate(net: Network, seqs, *, model: str = "", p: float = 1.0, **meta) -> EvalReport:
    """Pooled per-step AUROC and AUPRC over the valid steps of ``seqs``."""
    seqs = [s for s in seqs if s.n_valid > 0]
    if not seqs:
        raise ValueError("nothing to evaluate: split has no valid steps")
    scores, labels = predict_scores(net, seqs)
    rep = EvalReport(model=model or net.config.kind, kind=net.config.kind, p=p, seed=net.seed,
                     scores=scores, labels=labels, **meta)
    rep.n_pos = int(labels.sum())
    rep.n_neg = int(labels.size - labels.sum())
    rep.prior = rep.n_pos / labels.size
    notes = []
    try:
        rep.auroc = auroc(scores, labels)
    except MetricError as exc:
        notes.append(f"AUROC omitted: {exc}")
    try:
        rep.auprc = auprc(scores, labels)
    except MetricError as exc:
        notes.append(f"AUPRC omitted: {exc}")
    rep.note = "; ".join(notes)
    return rep


# --- sweeps and studies ------------------------------------------------------


@dataclass
class SweepResult:
    best_p: float
    rows: list            # (p, best validation AUROC, best epoch)
    networks: dict        # p -> trained network
    histories: dict


def sweep_loss_weight(arch: ArchitectureConfig, cohort: Cohort, grid, config: TrainConfig) -> SweepResult:
    """Train one model per loss weight and pick the best validation AUROC.

    Ties go to the larger p.
    """
    grid = [float(p) for p in grid]
    if not grid:
        raise ValueError("loss-weight grid is empty")
    for p in grid:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"grid value {p} outside [0, 1]")
    rows, nets, hists = [], {}, {}
    for p in grid:
        net, hist = train(build_architecture(arch, cohort.layout, config.seed), cohort, config, p=p)
        best = hist.valid_auroc[hist.best_epoch]
        rows.append((p, best, hist.best_epoch))
        nets[p], hists[p] = net, hist
    best_p = max(rows, key=lambda r: (r[1], r[0]))[0]
    return SweepResult(best_p, rows, nets, hists)


def _cohort_id(cohort: Cohort) -> str:
    syn = cohort.meta.get("synthetic")
    if syn:
        return f"synthetic-seed{syn['seed']}"
    return str(cohort.meta.get("source", ""))


def _run_cell(args):
    spec, cohort, config, phase1, study, fraction, iteration = args
    net, hists = train_model(spec, cohort, config, phase1=phase1)
    rep = evaluate(net, cohort.splits["test"], model=spec.name, p=spec.p, cohort=_cohort_id(cohort),
                   study=study, fraction=fraction, iteration=iteration)
    return rep, net, hists


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _two_phase_specs(models):
    return [m for m in models if m.arch.kind in TWO_PHASE_KINDS]


def run_prior_reduction_study(models, cohort: Cohort, fractions, config: TrainConfig, iterations: int = 7,
                              seed: int = 0, workers: int = 1, sink=None):
    """Train every model on each reduced-prior cohort and score it on the untouched test split.

    The reduced cohort for (fraction, iteration) is drawn once and shared by
    all models. ``sink(report, network, histories)`` receives each finished run.
    """
    reports = []
    for it in range(iterations):
        for f in fractions:
            reduced = reduce_prior(cohort, f, seed, it)
            two = _two_phase_specs(models)
            phase1 = train_phase1(two[0].arch, reduced, config)[0] if two else None
            jobs = [(m, reduced, config, phase1 if m in two else None, "prior", f, it) for m in models]
            for rep, net, hists in _map(_run_cell, jobs, workers):
                reports.append(rep)
                if sink:
                    sink(rep, net, hists)
    return reports


def run_sample_reduction_study(models, cohort: Cohort, fractions, config: TrainConfig, iterations: int = 7,
                               seed: int = 0, workers: int = 1, sink=None):
    """As the prior study but sampling admissions uniformly.

    GPSR pre-training for the two-phase baselines uses the full train split;
    only their supervised phase sees the reduced data.
    """
    two = _two_phase_specs(models)
    phase1 = train_phase1(two[0].arch, cohort, config)[0] if two else None
    reports = []
    for it in range(iterations):
        for f in fractions:
            reduced = reduce_samples(cohort, f, seed, it)
            jobs = [(m, reduced, config, phase1 if m in two else None, "samples", f, it) for m in models]
            for rep, net, hists in _map(_run_cell, jobs, workers):
                reports.append(rep)
                if sink:
                    sink(rep, net, hists)
    return reports


# --- persistence -------------------------------------------------------------


def save_checkpoint(path, net: Network, state: AdamWState | None = None, extra: dict | None = None) -> None:
    arrays = {f"param/{k}": v for k, v in net.params.items()}
    if state is not None:
        arrays.update({f"adam.m/{k}": v for k, v in state.m.items()})
        arrays.update({f"adam.v/{k}": v for k, v in state.v.items()})
    meta = {
        "architecture": net.config.to_dict(),
        "layout": net.layout.to_list(),
        "seed": net.seed,
        "blocks": {k: list(v.shape) for k, v in net.params.items()},
        "adam_t": state.t if state is not None else None,
        "extra": extra or {},
    }
    save_arrays(path, arrays, meta)


def load_checkpoint(path):
    arrays, meta = load_arrays(path)
    cfg = ArchitectureConfig(**meta["architecture"])
    layout = TaskLayout(tuple(tuple(t) for t in meta["layout"]))
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    params = {k: params[k] for k in meta["blocks"]}
    net = Network(cfg, layout, params, meta["seed"])
    state = None
    if meta.get("adam_t") is not None:
        state = AdamWState(
            {k[len("adam.m/"):]: v for k, v in arrays.items() if k.startswith("adam.m/")},
            {k[len("adam.v/"):]: v for k, v in arrays.items() if k.startswith("adam.v/")},
            meta["adam_t"],
        )
    return net, state, meta.get("extra", {})


def write_scores(path, scores, labels) -> None:
    with open(path, "w") as fh:
        fh.write("score,label\n")
        for s, y in zip(scores, labels):
            fh.write(f"{float(s)!r},{int(y)}\n")


def read_scores(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1].astype(np.int8)


def write_run(directory, report: EvalReport, net: Network | None = None, histories: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(dumps_json(report.to_dict()))
    if report.scores is not None:
        write_scores(directory / "scores.csv", report.scores, report.labels)
    if histories is not None:
        (directory / "history.json").write_text(dumps_json({k: h.to_dict() for k, h in histories.items()}))
    if net is not None:
        save_checkpoint(directory / "checkpoint.zip", net)


def read_report(directory) -> EvalReport:
    directory = Path(directory)
    d = json.loads((directory / "report.json").read_text())
    rep = EvalReport(**d)
    if (directory / "scores.csv").exists():
        rep.scores, rep.labels = read_scores(directory / "scores.csv")
    return rep


def run_name(rep: EvalReport) -> str:
    return f"{rep.study or 'run'}_f{rep.fraction:.2f}_it{rep.iteration}_{rep.model}"
