"""Stratified folds, minority oversampling, classification metrics and CV."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gbdt
from .gbdt import Hyperparameters

CLIP = 1e-15
THRESHOLD = 0.5
METRICS = ("log_loss", "accuracy", "auc", "auprc", "precision_0", "recall_0",
           "precision_1", "recall_1", "precision_macro", "recall_macro",
           "precision_weighted", "recall_weighted")


class StratificationError(ValueError):
    pass


class ResamplingError(ValueError):
    pass


class MetricError(ValueError):
    pass


class FoldError(RuntimeError):
    def __init__(self, fold: int, cause: Exception):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold


# --------------------------------------------------------------------- folds

@dataclass
class FoldAssignment:
    k: int
    fold: np.ndarray

    def indices(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(train, valid) row indices for fold ``i``."""
        return np.flatnonzero(self.fold != i), np.flatnonzero(self.fold == i)


def stratified_kfold(labels: Sequence[int], k: int, seed: int = 0,
                     strict: bool = False) -> FoldAssignment:
    """Shuffle each class by ``seed`` and deal its members round-robin.

    Dealing continues across classes from where the previous class stopped, so
    fold sizes also differ by at most one. A class with fewer than ``k`` members
    leaves some folds without it; ``strict=True`` rejects that instead, which is
    what cross-validation needs so every held-out fold sees both classes.
    """
    y = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), np.int64)
    start = 0
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        if strict and len(members) < k:
            raise StratificationError(f"class {cls} has {len(members)} members, fewer than k={k}")
        members = members[rng.permutation(len(members))]
        fold[members] = (start + np.arange(len(members))) % k
        start = (start + len(members)) % k
    return FoldAssignment(k, fold)


def grouped_kfold(labels: Sequence[int], groups: Sequence, k: int, seed: int = 0) -> FoldAssignment:
    """Keep every group (e.g. a drive) inside one fold.

    Groups are shuffled by ``seed`` then placed largest first into the fold with
    the fewest positives so far, ties to the fewest rows. Class balance is only
    approximate.
    """
    y = np.asarray(labels)
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    if len(uniq) < k:
        raise StratificationError(f"{len(uniq)} groups cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    uniq = uniq[rng.permutation(len(uniq))]
    sizes = {gid: int((groups == gid).sum()) for gid in uniq}
    pos = {gid: int(y[groups == gid].sum()) for gid in uniq}
    order = sorted(uniq, key=lambda gid: -sizes[gid])
    fold_rows, fold_pos = np.zeros(k, int), np.zeros(k, int)
    fold = np.empty(len(y), np.int64)
    for gid in order:
        target = min(range(k), key=lambda i: (fold_pos[i] if pos[gid] else 0, fold_rows[i], i))
        fold[groups == gid] = target
        fold_rows[target] += sizes[gid]
        fold_pos[target] += pos[gid]
    return FoldAssignment(k, fold)


def oversample_minority(train_idx: Sequence[int], labels: Sequence[int], seed: int = 0) -> np.ndarray:
    """Original training rows followed by minority rows redrawn with replacement to parity."""
    idx = np.asarray(train_idx, dtype=np.int64)
    y = np.asarray(labels)[idx]
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise ResamplingError("oversampling needs both classes in the training part")
    if counts[0] == counts[1]:
        return idx.copy()
    minority = classes[int(np.argmin(counts))]
    pool = idx[y == minority]
    rng = np.random.default_rng(seed)
    extra = pool[rng.integers(len(pool), size=int(abs(counts[0] - counts[1])))]
    return np.concatenate([idx, extra])


# ------------------------------------------------------------------- metrics

def _pair(labels, probs):
    y = np.asarray(labels, dtype=float)
    p = np.asarray(probs, dtype=float)
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {p.shape}")
    return y, p


def log_loss(labels, probs) -> float:
    y, p = _pair(labels, probs)
    if y.size == 0:
        raise ValueError("empty input")
    p = np.clip(p, CLIP, 1 - CLIP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def _midranks(s: np.ndarray) -> np.ndarray:
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    srt = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and srt[j + 1] == srt[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(labels, scores) -> float:
    """Mann-Whitney statistic: P(positive outranks negative), ties counted one half."""
    y, s = _pair(labels, scores)
    n_pos = int((y == 1).sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes")
    r = _midranks(s)
    return float((r[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auprc(labels, scores) -> float:
    """Average precision: sum of precision times recall increment over distinct thresholds."""
    y, s = _pair(labels, scores)
    n_pos = (y == 1).sum()
    if n_pos == 0:
        raise MetricError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]  # final row of each tie block
    precision = tp[last] / (last + 1)
    recall = tp[last] / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


@dataclass
class ClassificationReport:
    accuracy: float
    precision: dict[int, float]
    recall: dict[int, float]
    support: dict[int, int]
    precision_macro: float
    recall_macro: float
    precision_weighted: float
    recall_weighted: float
    undefined: list[str] = field(default_factory=list)


def classification_report(labels, predictions, classes=(0, 1)) -> ClassificationReport:
    y = np.asarray(labels)
    yhat = np.asarray(predictions)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    precision, recall, support, undefined = {}, {}, {}, []
    for c in classes:
        tp = int(((yhat == c) & (y == c)).sum())
        pred = int((yhat == c).sum())
        true = int((y == c).sum())
        support[c] = true
        if pred == 0:
            undefined.append(f"precision_{c}")
        if true == 0:
            undefined.append(f"recall_{c}")
        precision[c] = tp / pred if pred else 0.0
        recall[c] = tp / true if true else 0.0
    total = sum(support.values())
    w = {c: support[c] / total if total else 0.0 for c in classes}
    return ClassificationReport(
        accuracy=float((y == yhat).mean()) if len(y) else 0.0,
        precision=precision, recall=recall, support=support,
        precision_macro=float(np.mean([precision[c] for c in classes])),
        recall_macro=float(np.mean([recall[c] for c in classes])),
        precision_weighted=float(sum(w[c] * precision[c] for c in classes)),
        recall_weighted=float(sum(w[c] * recall[c] for c in classes)),
        undefined=undefined,
    )


def score_fold(labels, probs) -> dict[str, float]:
    y = np.asarray(labels)
    p = np.asarray(probs, dtype=float)
    rep = classification_report(y, (p >= THRESHOLD).astype(int))
    return {
        "log_loss": log_loss(y, p),
        "accuracy": rep.accuracy,
        "auc": roc_auc(y, p),
        "auprc": auprc(y, p),
        "precision_0": rep.precision[0], "recall_0": rep.recall[0],
        "precision_1": rep.precision[1], "recall_1": rep.recall[1],
        "precision_macro": rep.precision_macro, "recall_macro": rep.recall_macro,
        "precision_weighted": rep.precision_weighted, "recall_weighted": rep.recall_weighted,
    }


# --------------------------------------------------------- cross-validation

@dataclass
class FoldResult:
    fold: int
    metrics: dict[str, float]
    n_train: int
    n_valid: int
    n_oversampled: int
    best_iteration: int
    leaked: int  # oversampled rows that also sit in this fold's validation part


@dataclass
class CvReport:
    folds: list[FoldResult]
    models: list = field(default_factory=list, repr=False)
    valid_indices: list = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return len(self.folds)

    def values(self, metric: str) -> np.ndarray:
        return np.array([f.metrics[metric] for f in sorted(self.folds, key=lambda f: f.fold)])

    def mean(self, metric: str) -> float:
        return float(self.values(metric).mean())

    def sd(self, metric: str) -> float:
        v = self.values(metric)
        return float(v.std(ddof=1)) if len(v) > 1 else 0.0

    @property
    def loss(self) -> float:
        return self.mean("log_loss")

    @property
    def leaked(self) -> int:
        return sum(f.leaked for f in self.folds)

    def aggregates(self) -> dict[str, dict[str, float]]:
        return {m: {"mean": self.mean(m), "sd": self.sd(m)} for m in METRICS}

    def to_dict(self) -> dict:
        return {
            "schema": "autogbm.cv_report",
            "version": 1,
            "k": self.k,
            "folds": [asdict(f) for f in sorted(self.folds, key=lambda f: f.fold)],
            "aggregates": self.aggregates(),
        }


def write_cv_report(report: CvReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n",
                          encoding="utf-8")


def cross_validate(X, y, hp: Hyperparameters, k: int = 10, seed: int = 0, resample: bool = False,
                   folds: FoldAssignment | None = None, feature_names: Sequence[str] | None = None,
                   keep_models: bool = False) -> CvReport:
    """Fit on k-1 folds, early-stop and score on the held-out fold, for every fold.

    Fold ``i`` uses seed ``seed + i`` for resampling and boosting, so any fold can be
    rerun on its own.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    folds = folds or stratified_kfold(y, k, seed, strict=True)
    results, models, valid_sets = [], [], []
    for i in range(folds.k):
        try:
            train, valid = folds.indices(i)
            rows = oversample_minority(train, y, seed + i) if resample else train
            leaked = int(np.isin(rows[len(train):], valid).sum() + np.isin(train, valid).sum())
            model = gbdt.fit(X[rows], y[rows], hp, seed=seed + i, X_valid=X[valid],
                             y_valid=y[valid], feature_names=feature_names)
            probs = gbdt.predict_proba(model, X[valid])
            metrics = score_fold(y[valid], probs)
        except Exception as exc:
            raise FoldError(i, exc) from exc
        results.append(FoldResult(i, metrics, len(rows), len(valid), len(rows) - len(train),
                                  model.best_iteration, leaked))
        if keep_models:
            models.append(model)
            valid_sets.append(valid)
    return CvReport(results, models, valid_sets)
