"""Command-line entry point: ``autogbm <simulate|extract|tune|rfe|run|report>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .data import write_trajectory_csv
from .evaluation import write_cv_report
from .gbdt import Hyperparameters
from .pipeline import ExperimentConfig
from .selection import rfe, write_ranking, write_rfe_curve
from .simulator import SPREADS, generate_cohort
from .tpe import write_trials_csv

log = logging.getLogger("autogbm")

# CLI flag -> ExperimentConfig field
FLAG_FIELDS = {"seed": "seed", "folds": "folds", "iters": "n_iter", "split": "split",
               "resample": "resample", "filter": "filter", "window": "window_seconds",
               "input": "inputs", "group_by_drive": "group_by_drive"}


def _common(p: argparse.ArgumentParser, experiment: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", type=Path, default=None, help="JSON file of config keys")
    p.add_argument("--out", type=Path, default=Path("out"))
    if not experiment:
        return
    p.add_argument("--input", nargs="+", default=None,
                   help="trajectory CSV(s) or a features.csv")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--split", default=None, help="all | task:<name> | driver:<id>")
    p.add_argument("--resample", action="store_true", default=None,
                   help="oversample the minority class in training folds")
    p.add_argument("--filter", action="store_true", default=None,
                   help="median-filter signals before windowing")
    p.add_argument("--window", type=float, default=None, help="window length in seconds")
    p.add_argument("--group-by-drive", dest="group_by_drive", action="store_true", default=None)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    doc = pipeline.load_config(args.config) if args.config else {}
    for flag, key in FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            doc[key] = v
    return ExperimentConfig.from_dict(doc)


def cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else 0
    ds, manifest = generate_cohort(args.drivers, args.spread, seed, args.duration, args.rate)
    args.out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(ds, args.out / "trajectories.csv")
    manifest.write(args.out / "manifest.json")
    print(f"wrote {len(ds)} samples from {len(ds.drives)} drives to {args.out}")
    return 0


def cmd_extract(args) -> int:
    cfg = build_config(args)
    table = pipeline.load_table(cfg.inputs, cfg.window_seconds, cfg.filter, cfg.filter_window)
    path = pipeline.write_features(table, args.out)
    print(f"wrote {len(table)} windows to {path}")
    return 0


def _table(cfg: ExperimentConfig):
    return pipeline.apply_split(
        pipeline.load_table(cfg.inputs, cfg.window_seconds, cfg.filter, cfg.filter_window), cfg.split)


def cmd_tune(args) -> int:
    cfg = build_config(args)
    table = _table(cfg)
    folds = pipeline.make_folds(table, cfg.folds, cfg.seed, cfg.group_by_drive)
    history = pipeline.tune(table, cfg, folds)
    args.out.mkdir(parents=True, exist_ok=True)
    write_trials_csv(history, args.out / "trials.csv")
    pipeline.write_loss_curve(history, args.out / "loss_vs_iteration.csv")
    best = history.best
    write_cv_report(best.report.report, args.out / "cv_report.json")
    (args.out / "best.json").write_text(json.dumps(
        {"iteration": best.id, "loss": best.loss, "params": best.params}, indent=1,
        sort_keys=True) + "\n", encoding="utf-8")
    print(f"best trial {best.id}: loss {best.loss:.4f}, "
          f"accuracy {best.report.report.mean('accuracy'):.3f}")
    return 0


def _load_params(path: Path | None) -> Hyperparameters:
    if path is None:
        return Hyperparameters()
    doc = json.loads(path.read_text(encoding="utf-8"))
    params = doc.get("params") or doc.get("best_trial", {}).get("params") or doc
    return Hyperparameters.from_params(params)


def cmd_rfe(args) -> int:
    cfg = build_config(args)
    table = _table(cfg)
    hp = _load_params(args.params)
    folds = pipeline.make_folds(table, cfg.folds, cfg.seed, cfg.group_by_drive)
    res = rfe(table.X, table.y, table.names, hp, cfg.folds, cfg.seed, cfg.resample,
              cfg.rfe_reps, folds)
    args.out.mkdir(parents=True, exist_ok=True)
    write_rfe_curve(res, args.out / "rfe_curve.csv")
    write_ranking(res, args.out / "ranking.csv")
    print(f"selected {res.selected_size} features: {', '.join(res.selected)}")
    return 0


def cmd_run(args) -> int:
    cfg = build_config(args)
    report = pipeline.run_experiment(cfg)
    pipeline.emit_report(report, args.out)
    agg = report.best_cv.aggregates()
    print(f"split {cfg.split}: best loss {report.best.loss:.4f}, "
          f"CV accuracy {agg['accuracy']['mean']:.3f} +/- {agg['accuracy']['sd']:.3f}")
    if report.rfe is not None:
        print(f"RFE selected {report.rfe.selected_size}: {', '.join(report.rfe.selected)}")
    return 0


def cmd_report(args) -> int:
    reports = [pipeline.load_report(p) for p in args.reports]
    iv, v = pipeline.summary_tables(reports, args.top)
    args.out.mkdir(parents=True, exist_ok=True)
    pipeline.write_table(iv, args.out / "table_iv.csv")
    pipeline.write_table(v, args.out / "table_v.csv")
    print(pipeline.format_table(iv))
    print()
    print(pipeline.format_table(v))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autogbm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic driver cohort")
    _common(p, experiment=False)
    p.add_argument("--drivers", type=int, default=8)
    p.add_argument("--spread", default="default", choices=sorted(SPREADS))
    p.add_argument("--duration", type=float, default=660.0, help="seconds per drive")
    p.add_argument("--rate", type=float, default=20.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("extract", help="trajectory CSV -> features.csv")
    _common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("tune", help="TPE search with k-fold CV log loss")
    _common(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("rfe", help="recursive feature elimination")
    _common(p)
    p.add_argument("--params", type=Path, default=None,
                   help="best.json or report.json holding the hyperparameters")
    p.set_defaults(func=cmd_rfe)

    p = sub.add_parser("run", help="full pipeline")
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="tabulate one or more run directories")
    p.add_argument("reports", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=Path("."))
    p.add_argument("--top", type=int, default=15)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"autogbm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
