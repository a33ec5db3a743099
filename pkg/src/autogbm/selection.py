"""Permutation importance and recursive feature elimination."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gbdt
from .evaluation import FoldAssignment, cross_validate, stratified_kfold
from .gbdt import GbdtModel, Hyperparameters


@dataclass
class ImportanceScores:
    scores: dict[str, float]
    method: str
    repetitions: int = 0
    seed: int | None = None

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.scores.items(), key=lambda kv: -kv[1])


def _used_features(model: GbdtModel) -> set[int]:
    return {s.feature for t in model.used_trees() for s in t.splits()}


def permutation_importance(model: GbdtModel, X, y, reps: int = 5, seed: int = 0) -> ImportanceScores:
    """Accuracy drop when one column of the validation set is shuffled, averaged over ``reps``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if len(X) == 0:
        raise ValueError("permutation importance needs a non-empty validation set")
    rng = np.random.default_rng(seed)
    base = float(((gbdt.predict_proba(model, X) >= 0.5) == y).mean())
    used = _used_features(model)
    scores = {}
    Xp = X.copy()
    for j, name in enumerate(model.feature_names):
        perms = [rng.permutation(len(X)) for _ in range(reps)]
        if j not in used:
            # the model never reads this column, so every shuffle scores the baseline
            scores[name] = 0.0
            continue
        drops = []
        for perm in perms:
            Xp[:, j] = X[perm, j]
            acc = float(((gbdt.predict_proba(model, Xp) >= 0.5) == y).mean())
            drops.append(base - acc)
        Xp[:, j] = X[:, j]
        scores[name] = float(np.mean(drops))
    return ImportanceScores(scores, "permutation", reps, seed)


def builtin_importance(model: GbdtModel, kind: str) -> ImportanceScores:
    return ImportanceScores(gbdt.builtin_importance(model, kind), kind)


@dataclass
class RfeResult:
    eliminated: list[str]
    survivor: str
    curve: list[tuple[int, float, float]]  # (subset size, mean CV accuracy, sd)
    selected_size: int
    importance_history: list[dict[str, float]] = field(default_factory=list)
    leaked: int = 0

    @property
    def ranking(self) -> list[str]:
        """Features ordered from last removed (rank 1) to first removed."""
        return [self.survivor, *reversed(self.eliminated)]

    @property
    def selected(self) -> list[str]:
        return self.ranking[:self.selected_size]

    def accuracy_at(self, size: int) -> float:
        return next(m for s, m, _ in self.curve if s == size)


def select_subset(curve: Sequence[tuple[int, float, float]]) -> int:
    """Smallest size whose mean accuracy is within one sd of the best size's mean."""
    if not curve:
        raise ValueError("empty curve")
    best_size, best_mean, best_sd = max(curve, key=lambda c: (c[1], -c[0]))
    bar = best_mean - best_sd
    return min(size for size, mean, _ in curve if mean >= bar)


def rfe(X, y, feature_names: Sequence[str], hp: Hyperparameters, k: int = 10, seed: int = 0,
        resample: bool = False, reps: int = 5, folds: FoldAssignment | None = None) -> RfeResult:
    """Drop the least permutation-important feature, one per round, down to one feature.

    Column subsampling is pinned to 1.0 so the order depends only on the data and
    ``seed``. Ties remove the feature that comes later in ``feature_names``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    names = list(feature_names)
    if len(names) < 2:
        raise ValueError("RFE needs at least two features")
    hp = hp.replace(colsample_bytree=1.0, colsample_bylevel=1.0)
    folds = folds or stratified_kfold(y, k, seed, strict=True)
    current = list(range(len(names)))
    eliminated, curve, history = [], [], []
    leaked = 0
    while True:
        sub = [names[j] for j in current]
        try:
            rep = cross_validate(X[:, current], y, hp, seed=seed, resample=resample, folds=folds,
                                 feature_names=sub, keep_models=True)
        except Exception as exc:
            raise RuntimeError(f"RFE failed on subset {sub}: {exc}") from exc
        leaked += rep.leaked
        curve.append((len(current), rep.mean("accuracy"), rep.sd("accuracy")))
        if len(current) == 1:
            break
        total = np.zeros(len(current))
        for i, (model, valid) in enumerate(zip(rep.models, rep.valid_indices)):
            imp = permutation_importance(model, X[valid][:, current], y[valid], reps, seed + i)
            total += np.array([imp.scores[n] for n in sub])
        mean_imp = total / len(rep.models)
        history.append(dict(zip(sub, mean_imp.tolist())))
        lowest = mean_imp.min()
        drop = max(pos for pos in range(len(current)) if mean_imp[pos] == lowest)
        eliminated.append(names[current.pop(drop)])
    return RfeResult(eliminated, names[current[0]], curve, select_subset(curve), history, leaked)


def write_rfe_curve(result: RfeResult, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["size", "mean_accuracy", "sd_accuracy"])
        for size, mean, sd in result.curve:
            w.writerow([size, repr(float(mean)), repr(float(sd))])


def write_ranking(result: RfeResult, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "feature", "selected"])
        for i, name in enumerate(result.ranking, start=1):
            w.writerow([i, name, int(i <= result.selected_size)])
