"""Command-line entry point: ``lowprior <subcommand> --config FILE --out DIR``.

Every subcommand reads one YAML file; see ``configs/`` for annotated
examples. Relative paths inside a config resolve against the config
file's directory.
"""
from __future__ import annotations

import argparse
import csv
import logging
import shutil
import statistics
import sys
from dataclasses import fields
from pathlib import Path

import yaml

from .archive import dumps_json
from .data import SyntheticConfig, generate_synthetic_cohort, load_cohort, save_cohort
from .experiment import (
    DEFAULT_P_GRID, ModelSpec, TrainConfig, evaluate, load_checkpoint, read_report,
    run_name, run_prior_reduction_study, run_sample_reduction_study, sweep_loss_weight, train_model,
    write_run,
)
from .model import ArchitectureConfig
from .optim import OptimConfig

log = logging.getLogger("lowprior")


class ConfigError(ValueError):
    pass


# --- config parsing ------------------------------------------------------------


def load_yaml(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: {where}: {exc.problem}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _build(cls, data, section: str, **extra):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown field")
    try:
        return cls(**{**data, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _check_keys(data: dict, allowed, section: str):
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{section}.{key}: unknown field")


def parse_train_config(data, seed=None) -> TrainConfig:
    data = dict(data or {})
    optim = _build(OptimConfig, data.pop("optim", None), "train.optim")
    if seed is not None:
        data["seed"] = seed
    return _build(TrainConfig, data, "train", optim=optim)


def parse_model(data, d_in: int, section: str) -> ModelSpec:
    data = dict(data or {})
    name = data.pop("name", None)
    p = data.pop("p", 1.0)
    arch = _build(ArchitectureConfig, data, section, d_in=d_in)
    try:
        p = float(p)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.p: not a number: {p!r}") from None
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"{section}.p: must lie in [0, 1], got {p}")
    return ModelSpec(name or arch.kind, arch, p)


def _resolve(base: Path, value, field_name: str) -> Path:
    if not value:
        raise ConfigError(f"{field_name}: required")
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def _load_cohort(base, cfg):
    path = _resolve(base, cfg.get("cohort"), "cohort")
    if not (path / "cohort.zip").exists():
        raise ConfigError(f"cohort: no cohort archive at {path}")
    return load_cohort(path)


def _prepare_out(out: Path, force: bool):
    if out.exists() and any(out.iterdir()):
        if not force:
            raise ConfigError(f"output directory {out} exists and is not empty (use --force)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def _snapshot(out: Path, resolved: dict):
    (out / "config.yaml").write_text(yaml.safe_dump(resolved, sort_keys=True))


# --- subcommands -----------------------------------------------------------------


def cmd_generate(cfg: dict, base: Path, out: Path, args) -> None:
    _check_keys(cfg, {"synthetic"}, "config")
    syn = dict(cfg.get("synthetic") or {})
    if args.seed is not None:
        syn["seed"] = args.seed
    syn_cfg = _build(SyntheticConfig, syn, "synthetic")
    cohort = generate_synthetic_cohort(syn_cfg)
    _prepare_out(out, args.force)
    save_cohort(cohort, out)
    _snapshot(out, {"synthetic": syn_cfg.to_dict()})
    print(cohort.statistics_table(), end="")
    if not cohort.meta.get("train_prior_in_band", True):
        log.warning("realized train prior %.5f is outside the configured band", cohort.split_stats("train")["Prior"])


def _train_section(cfg, args):
    return parse_train_config(cfg.get("train"), seed=args.seed)


def cmd_train(cfg: dict, base: Path, out: Path, args) -> None:
    _check_keys(cfg, {"cohort", "model", "train"}, "config")
    cohort = _load_cohort(base, cfg)
    spec = parse_model(cfg.get("model"), cohort.d_in, "model")
    tc = _train_section(cfg, args)
    _prepare_out(out, args.force)
    net, hists = train_model(spec, cohort, tc)
    rep = evaluate(net, cohort.splits["test"], model=spec.name, p=spec.p, cohort=str(cfg["cohort"]))
    write_run(out, rep, net, hists)
    _snapshot(out, {"cohort": str(cfg["cohort"]), "model": {"name": spec.name, "p": spec.p, **spec.arch.to_dict()},
                    "train": tc.to_dict()})
    print(f"{spec.name}: test AUROC {rep.auroc:.4f}  AUPRC {rep.auprc:.4f}  prior {rep.prior:.4f}")


def cmd_evaluate(cfg: dict, base: Path, out: Path, args) -> None:
    _check_keys(cfg, {"cohort", "checkpoint", "split", "name", "p"}, "config")
    cohort = _load_cohort(base, cfg)
    ckpt = _resolve(base, cfg.get("checkpoint"), "checkpoint")
    if not ckpt.exists():
        raise ConfigError(f"checkpoint: {ckpt} not found")
    split = cfg.get("split", "test")
    if split not in cohort.splits:
        raise ConfigError(f"split: unknown split {split!r}")
    net, _, _ = load_checkpoint(ckpt)
    _prepare_out(out, args.force)
    rep = evaluate(net, cohort.splits[split], model=cfg.get("name", net.config.kind), p=float(cfg.get("p", 1.0)),
                   cohort=str(cfg["cohort"]), split=split)
    write_run(out, rep)
    _snapshot(out, cfg)
    print(f"{rep.model} on {split}: AUROC {rep.auroc}  AUPRC {rep.auprc}  prior {rep.prior:.4f}")


def cmd_sweep_p(cfg: dict, base: Path, out: Path, args) -> None:
    _check_keys(cfg, {"cohort", "model", "train", "grid"}, "config")
    cohort = _load_cohort(base, cfg)
    spec = parse_model(cfg.get("model"), cohort.d_in, "model")
    tc = _train_section(cfg, args)
    grid = cfg.get("grid", list(DEFAULT_P_GRID))
    if not isinstance(grid, list) or not grid:
        raise ConfigError("grid: expected a nonempty list of loss weights")
    for i, g in enumerate(grid):
        if not isinstance(g, (int, float)) or not 0.0 <= g <= 1.0:
            raise ConfigError(f"grid[{i}]: loss weight must lie in [0, 1], got {g!r}")
    _prepare_out(out, args.force)
    result = sweep_loss_weight(spec.arch, cohort, grid, tc)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "p", "valid_auroc", "best_epoch"])
        for p, v, e in result.rows:
            w.writerow([spec.name, repr(p), repr(v), e])
    for p, net in result.networks.items():
        rep = evaluate(net, cohort.splits["test"], model=spec.name, p=p, cohort=str(cfg["cohort"]), study="sweep")
        write_run(out / "runs" / f"p{p:.2f}", rep, net, {"main": result.histories[p]})
    (out / "best.json").write_text(dumps_json({"model": spec.name, "best_p": result.best_p}))
    _snapshot(out, {"cohort": str(cfg["cohort"]), "model": {"name": spec.name, **spec.arch.to_dict()},
                    "train": tc.to_dict(), "grid": [float(g) for g in grid]})
    for p, v, _ in result.rows:
        print(f"p={p:.2f}  valid AUROC {v:.4f}{'  <- best' if p == result.best_p else ''}")


def _cmd_ablate(study: str, cfg: dict, base: Path, out: Path, args) -> None:
    _check_keys(cfg, {"cohort", "models", "train", "fractions", "iterations", "seed"}, "config")
    cohort = _load_cohort(base, cfg)
    models_cfg = cfg.get("models")
    if not isinstance(models_cfg, list) or not models_cfg:
        raise ConfigError("models: expected a nonempty list")
    models = [parse_model(m, cohort.d_in, f"models[{i}]") for i, m in enumerate(models_cfg)]
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ConfigError(f"models: names must be unique, got {names}")
    two = [m for m in models if m.arch.kind in ("Embedding", "Residual")]
    if two and any(m.arch.hidden != two[0].arch.hidden or m.arch.embed != two[0].arch.embed for m in two):
        raise ConfigError("models: Embedding and Residual entries must share hidden/embed sizes")
    tc = _train_section(cfg, args)
    fractions = cfg.get("fractions", [1.0, 0.8, 0.6, 0.4, 0.2])
    iterations = int(cfg.get("iterations", 7))
    seed = int(cfg.get("seed", 0)) if args.seed is None else args.seed
    _prepare_out(out, args.force)
    reports = []

    def sink(rep, net, hists):
        write_run(out / "runs" / run_name(rep), rep, net, hists)
        reports.append(rep)
        log.info("%s fraction %.2f iteration %d: AUPRC %.4f", rep.model, rep.fraction, rep.iteration, rep.auprc)

    runner = run_prior_reduction_study if study == "prior" else run_sample_reduction_study
    try:
        runner(models, cohort, fractions, tc, iterations=iterations, seed=seed, workers=args.workers, sink=sink)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_summary(reports, out)
    _snapshot(out, {
        "cohort": str(cfg["cohort"]),
        "models": [{"name": m.name, "p": m.p, **m.arch.to_dict()} for m in models],
        "train": tc.to_dict(), "fractions": [float(f) for f in fractions],
        "iterations": iterations, "seed": seed,
    })
    print((out / "auprc_vs_fraction.csv").read_text(), end="")


def cmd_ablate_prior(cfg, base, out, args):
    _cmd_ablate("prior", cfg, base, out, args)


def cmd_ablate_samples(cfg, base, out, args):
    _cmd_ablate("samples", cfg, base, out, args)


# --- reporting ---------------------------------------------------------------------

REPORT_FIELDS = ("study", "model", "kind", "p", "fraction", "iteration", "seed", "split",
                 "auroc", "auprc", "prior", "n_pos", "n_neg")


def _fmt(v):
    return "" if v is None else (repr(v) if isinstance(v, float) else str(v))


def _by_fraction(reports, metric):
    groups = {}
    for r in reports:
        v = getattr(r, metric)
        if v is not None:
            groups.setdefault((r.study, r.model, r.fraction), []).append(v)
    rows = []
    for (study, model, frac), vals in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], -kv[0][2])):
        rows.append([study, model, repr(frac), len(vals), repr(statistics.fmean(vals)), repr(statistics.median(vals))])
    return rows


def write_summary(reports, out: Path) -> None:
    """Per-run table plus AUPRC/AUROC-vs-fraction aggregates."""
    reports = sorted(reports, key=lambda r: (r.study, r.model, -r.fraction, r.iteration))
    with open(out / "reports.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for r in reports:
            w.writerow([_fmt(getattr(r, f)) for f in REPORT_FIELDS])
    for metric in ("auprc", "auroc"):
        with open(out / f"{metric}_vs_fraction.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["study", "model", "fraction", "n", f"mean_{metric}", f"median_{metric}"])
            w.writerows(_by_fraction(reports, metric))


def _plot(out: Path, reports, sweeps):
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "lowprior"
    meta = {"Date": None, "Creator": None}
    for metric in ("auprc", "auroc"):
        rows = _by_fraction(reports, metric)
        if not rows:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for study, model in sorted({(r[0], r[1]) for r in rows}):
            pts = [(float(r[2]), float(r[4])) for r in rows if r[0] == study and r[1] == model]
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{model} ({study})")
        ax.set_xlabel("fraction retained")
        ax.set_ylabel(f"mean test {metric.upper()}")
        ax.invert_xaxis()
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / f"{metric}_vs_fraction.svg", metadata=meta)
        plt.close(fig)
    if sweeps:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for model in sorted({s[0] for s in sweeps}):
            pts = sorted((float(s[1]), float(s[2])) for s in sweeps if s[0] == model)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=model)
        ax.set_xlabel("loss weight p")
        ax.set_ylabel("validation AUROC")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "auroc_vs_p.svg", metadata=meta)
        plt.close(fig)


def cmd_report(cfg: dict, base: Path, out: Path, args) -> None:
    runs = args.runs or cfg.get("runs")
    if not runs:
        raise ConfigError("runs: no input directory given (--runs or 'runs' in config)")
    runs = _resolve(base, runs, "runs") if not args.runs else Path(args.runs)
    if not runs.is_dir():
        raise ConfigError(f"runs: {runs} is not a directory")
    reports = [read_report(p.parent) for p in sorted(runs.rglob("report.json"))]
    sweeps = []
    for path in sorted(runs.rglob("sweep.csv")):
        with open(path, newline="") as fh:
            sweeps += [(r["model"], r["p"], r["valid_auroc"]) for r in csv.DictReader(fh)]
    if not reports and not sweeps:
        raise ConfigError(f"no reports found under {runs}")
    _prepare_out(out, args.force)
    write_summary(reports, out)
    with open(out / "auroc_vs_p.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "p", "valid_auroc"])
        w.writerows(sorted(sweeps, key=lambda s: (s[0], float(s[1]))))
    if args.plots:
        _plot(out, reports, sweeps)
    print(f"aggregated {len(reports)} reports and {len(sweeps)} sweep rows into {out}")


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep-p": cmd_sweep_p,
    "ablate-prior": cmd_ablate_prior,
    "ablate-samples": cmd_ablate_samples,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowprior", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--workers", type=int, default=1, help="parallel training runs (ablations)")
        sp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        if name == "report":
            sp.add_argument("--runs", help="directory searched recursively for run reports")
            sp.add_argument("--plots", action="store_true", help="also write SVG plots")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = load_yaml(args.config)
            base = Path(args.config).resolve().parent
        elif args.command == "report":
            cfg, base = {}, Path.cwd()
        else:
            raise ConfigError("--config is required")
        COMMANDS[args.command](cfg, base, Path(args.out), args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
