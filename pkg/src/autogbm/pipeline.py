"""End-to-end experiment: windows -> features -> TPE tuning -> ensemble -> RFE -> report."""
from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, gbdt
from .data import TASKS, filter_dataset, parse_trajectory_csv, window_segments
from .evaluation import (CvReport, FoldAssignment, cross_validate, grouped_kfold,
                         stratified_kfold, write_cv_report)
from .features import FeatureTable, extract_table, read_features_csv, write_features_csv
from .gbdt import Hyperparameters
from .selection import RfeResult, builtin_importance, rfe, write_ranking, write_rfe_curve
from .tpe import (ParamSpec, TpeSettings, TrialHistory, default_search_space, optimize,
                  write_trials_csv)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    inputs: list[str] = field(default_factory=list)
    split: str = "all"
    folds: int = 10
    n_iter: int = 200
    seed: int = 0
    resample: bool = False
    filter: bool = False
    filter_window: int = 5
    window_seconds: float = 1.0
    group_by_drive: bool = False
    rfe: bool = True
    rfe_reps: int = 5
    top_k: int = 5
    ensemble_size: int = 5
    space: dict[str, Any] = field(default_factory=dict)  # name -> [low, high] or choice list

    def __post_init__(self):
        parse_split(self.split)
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**doc)


def load_config(path: str | Path) -> dict:
    """Read a flat JSON object of ExperimentConfig fields."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def parse_split(split: str) -> tuple[str, str | None]:
    if split == "all":
        return "all", None
    kind, _, arg = split.partition(":")
    if kind == "task" and arg in TASKS and arg != "none":
        return "task", arg
    if kind == "driver" and arg:
        return "driver", arg
    raise ConfigError(f"bad split {split!r}; use all, task:<short_msg|long_msg|call> or driver:<id>")


def search_space(overrides: dict[str, Any] | None = None) -> tuple[ParamSpec, ...]:
    space = list(default_search_space())
    for name, bounds in (overrides or {}).items():
        i = next((i for i, p in enumerate(space) if p.name == name), None)
        if i is None:
            raise ConfigError(f"unknown hyperparameter {name!r}")
        p = space[i]
        if p.kind == "categorical":
            space[i] = ParamSpec(name, p.kind, choices=tuple(bounds))
        else:
            space[i] = ParamSpec(name, p.kind, bounds[0], bounds[1])
    return tuple(space)


# ---------------------------------------------------------------- data stages

def is_trajectory_csv(path: str | Path) -> bool:
    with Path(path).open(encoding="utf-8") as fh:
        return "time_s" in fh.readline().split(",")


def load_table(inputs: Sequence[str], window_seconds: float = 1.0, filter: bool = False,
               filter_window: int = 5) -> FeatureTable:
    """Trajectory CSVs are windowed and featurised; feature CSVs are read as they are."""
    if not inputs:
        raise ConfigError("no input files")
    tables = []
    for path in inputs:
        if is_trajectory_csv(path):
            ds = parse_trajectory_csv(path)
            if filter:
                ds = filter_dataset(ds, filter_window)
            tables.append(extract_table(window_segments(ds, window_seconds)))
        else:
            tables.append(read_features_csv(path))
    if len(tables) == 1:
        return tables[0]
    return FeatureTable(
        np.vstack([t.X for t in tables]), np.concatenate([t.y for t in tables]), tables[0].names,
        *(np.concatenate([getattr(t, a) for t in tables])
          for a in ("driver_id", "drive_id", "task", "window_idx")),
    )


def apply_split(table: FeatureTable, split: str) -> FeatureTable:
    """Task splits keep that task's distracted windows against every undistracted window."""
    kind, arg = parse_split(split)
    if kind == "all":
        rows = np.arange(len(table))
    elif kind == "task":
        rows = np.flatnonzero((table.y == 0) | (table.task == arg))
    else:
        rows = np.flatnonzero(table.driver_id == arg)
    sub = table.subset(rows)
    if len(sub) == 0 or len(np.unique(sub.y)) < 2:
        raise ConfigError(f"split {split!r} does not contain both classes")
    return sub


def make_folds(table: FeatureTable, k: int, seed: int, group_by_drive: bool) -> FoldAssignment:
    if group_by_drive:
        return grouped_kfold(table.y, table.groups(), k, seed)
    return stratified_kfold(table.y, k, seed, strict=True)


# ------------------------------------------------------------------ ensemble

@dataclass
class Ensemble:
    members: list[int]  # pool indices, repeats allowed
    accuracy: float
    best_single_accuracy: float
    trace: list[float] = field(default_factory=list)

    @property
    def weights(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for m in self.members:
            out[m] = out.get(m, 0.0) + 1.0 / len(self.members)
        return out


def _accuracy(y, p) -> float:
    return float(((np.asarray(p) >= 0.5) == np.asarray(y)).mean())


def greedy_ensemble(pool: Sequence, y_valid, max_size: int = 5, X_valid=None) -> Ensemble:
    """Forward selection with replacement on validation accuracy of the mean probability.

    ``pool`` holds either fitted models (then ``X_valid`` is required) or their
    validation probabilities. Selection stops at ``max_size`` members or when no
    addition strictly improves accuracy; ties pick the lowest pool index.
    """
    if len(pool) == 0:
        raise ValueError("empty model pool")
    if X_valid is not None:
        probs = [gbdt.predict_proba(m, X_valid) for m in pool]
    else:
        probs = [np.asarray(p, dtype=float) for p in pool]
    y = np.asarray(y_valid)
    singles = [_accuracy(y, p) for p in probs]
    members: list[int] = []
    total = np.zeros(len(y))
    current = -math.inf
    trace = []
    while len(members) < max_size:
        scores = [_accuracy(y, (total + p) / (len(members) + 1)) for p in probs]
        pick = int(np.argmax(scores))
        if members and scores[pick] <= current:
            break
        members.append(pick)
        total += probs[pick]
        current = scores[pick]
        trace.append(current)
    return Ensemble(members, current, max(singles), trace)


def ensemble_proba(models: Sequence[gbdt.GbdtModel], members: Sequence[int], X) -> np.ndarray:
    return np.mean([gbdt.predict_proba(models[m], X) for m in members], axis=0)


# --------------------------------------------------------------- experiment

@dataclass
class TrialResult:
    report: CvReport
    oof: np.ndarray  # out-of-fold probabilities


def make_objective(table: FeatureTable, folds: FoldAssignment, seed: int, resample: bool):
    """CV log loss of a parameter set; the CV report and out-of-fold probabilities ride along."""

    def objective(params: dict) -> tuple[float, TrialResult]:
        hp = Hyperparameters.from_params(params)
        rep = cross_validate(table.X, table.y, hp, seed=seed, resample=resample, folds=folds,
                             feature_names=table.names, keep_models=True)
        oof = np.empty(len(table))
        for model, valid in zip(rep.models, rep.valid_indices):
            oof[valid] = gbdt.predict_proba(model, table.X[valid])
        rep.models = []
        return rep.loss, TrialResult(rep, oof)

    return objective


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    n_windows: int
    n_positive: int
    history: TrialHistory
    best_cv: CvReport
    n_estimators_effective: int
    ensemble: Ensemble
    ensemble_trials: list[int]
    models: list[gbdt.GbdtModel]
    rfe: RfeResult | None
    importance: dict[str, dict[str, float]]
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def best(self):
        return self.history.best

    def to_dict(self) -> dict:
        best = self.best
        hp = Hyperparameters.from_params(best.params)
        agg = self.best_cv.aggregates()
        top = self.history.top(self.config.top_k)
        doc = {
            "schema": "autogbm.experiment_report",
            "version": 1,
            "config": asdict(self.config),
            "data": {"n_windows": self.n_windows, "n_positive": self.n_positive},
            "best_trial": {"iteration": best.id, "loss": best.loss, "params": best.params},
            "table_iv": {
                "split": self.config.split,
                **asdict(hp.replace(n_estimators=self.n_estimators_effective)),
                "loss": best.loss,
                "accuracy": agg["accuracy"]["mean"],
            },
            "cv": self.best_cv.to_dict(),
            "top_trials": [{"iteration": t.id, "loss": t.loss, "params": t.params} for t in top],
            "ensemble": {
                "members": [self.ensemble_trials[m] for m in self.ensemble.members],
                "weights": {str(self.ensemble_trials[m]): w
                            for m, w in sorted(self.ensemble.weights.items())},
                "oof_accuracy": self.ensemble.accuracy,
                "best_single_oof_accuracy": self.ensemble.best_single_accuracy,
            },
            "importance": self.importance,
            "runtime": {
                "autogbm": __version__, "python": platform.python_version(),
                "numpy": np.__version__, "n_trials": len(self.history),
                "n_failed": len(self.history) - len(self.history.ok_trials()),
            },
        }
        if self.rfe is not None:
            doc["rfe"] = {
                "ranking_basis": "elimination order (last removed ranks first)",
                "ranking": self.rfe.ranking,
                "eliminated": self.rfe.eliminated,
                "curve": [{"size": s, "mean_accuracy": m, "sd_accuracy": sd}
                          for s, m, sd in self.rfe.curve],
                "selected_size": self.rfe.selected_size,
                "selected": self.rfe.selected,
                "full_accuracy": self.rfe.curve[0][1],
                "selected_accuracy": self.rfe.accuracy_at(self.rfe.selected_size),
            }
        return doc


def tune(table: FeatureTable, config: ExperimentConfig, folds: FoldAssignment | None = None
         ) -> TrialHistory:
    folds = folds or make_folds(table, config.folds, config.seed, config.group_by_drive)
    objective = make_objective(table, folds, config.seed, config.resample)
    return optimize(objective, search_space(config.space), config.n_iter, config.seed, TpeSettings())


def run_experiment(config: ExperimentConfig, table: FeatureTable | None = None) -> ExperimentReport:
    timings = {}

    def stage(name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kw)
        except (ConfigError, StageError):
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        timings[name] = time.perf_counter() - t0
        log.info("stage %s done in %.1f s", name, timings[name])
        return out

    if table is None:
        table = stage("extract", load_table, config.inputs, config.window_seconds, config.filter,
                      config.filter_window)
    table = apply_split(table, config.split)
    folds = make_folds(table, config.folds, config.seed, config.group_by_drive)
    history = stage("tune", tune, table, config, folds)

    best = history.best
    top = history.top(config.top_k)
    pool = [t.report.oof for t in top]
    ens = stage("ensemble", greedy_ensemble, pool, table.y, config.ensemble_size)
    ensemble_trials = [t.id for t in top]

    def refit():
        models = []
        for t in top:
            iters = [f.best_iteration for f in t.report.report.folds]
            n_est = max(1, int(round(float(np.mean(iters)))))
            hp = Hyperparameters.from_params(t.params).replace(n_estimators=n_est)
            models.append(gbdt.fit(table.X, table.y, hp, seed=config.seed,
                                   feature_names=table.names))
        return models

    models = stage("refit", refit)
    best_model = models[0]
    importance = {kind: builtin_importance(best_model, kind).scores for kind in ("weight", "gain")}

    rfe_result = None
    if config.rfe:
        best_hp = Hyperparameters.from_params(best.params)
        rfe_result = stage("rfe", rfe, table.X, table.y, table.names, best_hp, config.folds,
                           config.seed, config.resample, config.rfe_reps, folds)
    return ExperimentReport(
        config, len(table), int(table.y.sum()), history, best.report.report,
        best_model.best_iteration, ens, ensemble_trials, models, rfe_result, importance, timings,
    )


# -------------------------------------------------------------------- output

def write_loss_curve(history: TrialHistory, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss", "best_so_far"])
        for t, best in zip(history.trials, history.best_so_far()):
            w.writerow([t.id, repr(float(t.loss)), repr(float(best))])


def _dump(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def emit_report(report: ExperimentReport, out_dir: str | Path) -> list[Path]:
    """Write the report and its plot-ready tables; wall-clock timings go to run_log.json."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = [out / "report.json", out / "trials.csv", out / "loss_vs_iteration.csv",
             out / "cv_report.json"]
    _dump(report.to_dict(), paths[0])
    write_trials_csv(report.history, paths[1])
    write_loss_curve(report.history, paths[2])
    write_cv_report(report.best_cv, paths[3])
    if report.rfe is not None:
        paths += [out / "rfe_curve.csv", out / "ranking.csv"]
        write_rfe_curve(report.rfe, paths[-2])
        write_ranking(report.rfe, paths[-1])
    model_dir = out / "models"
    model_dir.mkdir(exist_ok=True)
    for trial_id, model in zip(report.ensemble_trials, report.models):
        p = model_dir / f"trial_{trial_id:04d}.json"
        gbdt.save_model(model, p)
        paths.append(p)
    _dump({"timings_s": report.timings}, out / "run_log.json")
    return paths


# ------------------------------------------------------------ table renders

TABLE_IV_ROWS = ("n_estimators", "learning_rate", "colsample_bylevel", "colsample_bytree",
                 "subsample", "max_depth", "min_child_weight", "l1_alpha", "l2_lambda",
                 "split_gamma", "loss", "accuracy")


def summary_tables(reports: Sequence[dict], top_n: int = 15) -> tuple[list[list[str]], list[list[str]]]:
    """Hyperparameter/performance table and feature-ranking table, one column per report."""
    iv = [["", *(r["table_iv"]["split"] for r in reports)]]
    for row in TABLE_IV_ROWS:
        vals = []
        for r in reports:
            v = r["table_iv"][row]
            vals.append(str(v) if isinstance(v, int) else f"{v:.3f}")
        iv.append([row, *vals])
    v_tab = [["rank", *(r["table_iv"]["split"] for r in reports)]]
    n = min(top_n, max((len(r.get("rfe", {}).get("ranking", [])) for r in reports), default=0))
    for i in range(n):
        v_tab.append([str(i + 1), *(r["rfe"]["ranking"][i] if "rfe" in r and i < len(r["rfe"]["ranking"])
                                   else "" for r in reports)])
    return iv, v_tab


def write_table(rows: list[list[str]], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def format_table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def load_report(path: str | Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    return json.loads(p.read_text(encoding="utf-8"))


def write_features(table: FeatureTable, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "features.csv"
    write_features_csv(table, path)
    return path
