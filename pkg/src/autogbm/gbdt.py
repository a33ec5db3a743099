"""Second-order gradient-boosted trees for binary classification.

Trees are grown by an exact greedy scan over presorted feature columns. Each
split maximises

    gain = 1/2 [S(G_L, H_L) + S(G_R, H_R) - S(G_L + G_R, H_L + H_R)] - gamma,
    S(G, H) = T(G)^2 / (H + lambda),  T(G) = sign(G) max(|G| - alpha, 0)

and each leaf holds ``-T(G) / (H + lambda)`` shrunk by the learning rate.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .features import FeatureVector

SCHEMA_VERSION = 1
# relative tolerance under which two split gains count as tied
TIE_RTOL = 1e-12


class FitError(ValueError):
    pass


class InferenceError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparameters:
    n_estimators: int = 100
    learning_rate: float = 0.1
    colsample_bylevel: float = 1.0
    colsample_bytree: float = 1.0
    subsample: float = 1.0
    max_depth: int = 6
    min_child_weight: float = 1.0
    l1_alpha: float = 0.0
    split_gamma: float = 0.0
    l2_lambda: float = 1.0

    def __post_init__(self):
        if self.n_estimators < 1 or self.max_depth < 1:
            raise ValueError("n_estimators and max_depth must be >= 1")
        for name in ("colsample_bylevel", "colsample_bytree", "subsample"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2_lambda < 0 or self.l1_alpha < 0 or self.split_gamma < 0 or self.min_child_weight < 0:
            raise ValueError("regularisation terms must be non-negative")

    @classmethod
    def from_params(cls, params: Mapping[str, float]) -> "Hyperparameters":
        kw = {}
        for f in fields(cls):
            if f.name in params:
                kw[f.name] = int(params[f.name]) if f.type in (int, "int") else float(params[f.name])
        return cls(**kw)

    def replace(self, **changes) -> "Hyperparameters":
        return Hyperparameters(**{**asdict(self), **changes})


@dataclass(frozen=True)
class SplitDecision:
    feature: int
    threshold: float
    gain: float


@dataclass
class Tree:
    """Flat node arrays; ``left == -1`` marks a leaf whose output is ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        def walk(i):
            return 0 if self.left[i] < 0 else 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def splits(self) -> list[SplitDecision]:
        return [SplitDecision(int(self.feature[i]), float(self.threshold[i]), float(self.gain[i]))
                for i in range(self.n_nodes) if self.left[i] >= 0]


@dataclass
class GbdtModel:
    trees: list[Tree]
    base_score: float
    learning_rate: float
    best_iteration: int
    feature_names: tuple[str, ...]
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)
    valid_loss: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def used_trees(self) -> list[Tree]:
        return self.trees[:self.best_iteration]


# ---------------------------------------------------------------- primitives

def grad_hess_logloss(label, margin):
    """Gradient and hessian of the logistic loss with respect to the margin."""
    margin = np.asarray(margin, dtype=float)
    p = 0.5 * (1.0 + np.tanh(0.5 * margin))
    g = p - np.asarray(label, dtype=float)
    h = p * (1.0 - p)
    if g.ndim == 0:
        return float(g), float(h)
    return g, h


def soft_threshold(G: float, alpha: float) -> float:
    return math.copysign(max(abs(G) - alpha, 0.0), G)


def leaf_weight(G: float, H: float, alpha: float, lam: float) -> float:
    if H + lam <= 0:
        raise ArithmeticError(f"hessian sum plus lambda must be positive, got {H + lam}")
    t = soft_threshold(G, alpha)
    return -t / (H + lam) if t != 0.0 else 0.0


def structure_score(G: float, H: float, alpha: float, lam: float) -> float:
    t = soft_threshold(G, alpha)
    return t * t / (H + lam)


def split_gain(GL, HL, GR, HR, alpha, lam, gamma) -> float:
    return 0.5 * (structure_score(GL, HL, alpha, lam) + structure_score(GR, HR, alpha, lam)
                  - structure_score(GL + GR, HL + HR, alpha, lam)) - gamma


# ------------------------------------------------------------- numba kernels

@njit(cache=True, error_model="numpy")
def _score(G, H, alpha, lam):
    a = abs(G) - alpha
    if a <= 0.0:
        return 0.0
    return a * a / (H + lam)


@njit(cache=True, error_model="numpy")
def _grow_tree(X, sorted_idx, sorted_val, g, h, in_sample, tree_feats, level_feats,
               level_counts, max_depth, min_child_weight, alpha, lam, gamma, lr, tie_rtol,
               ibuf, vbuf, goes_left):
    """Grow one tree level by level over the rows flagged in ``in_sample``.

    Every node owns a contiguous segment of the per-feature presorted row lists;
    a split stably partitions that segment into its two children, writing into
    the other half of the ping-pong buffers ``ibuf``/``vbuf`` (shape 2 x d x n).
    Children get consecutive ids, so the node layout matches depth-first growth
    with the same split rule.
    """
    n, d = X.shape
    nt = len(tree_feats)
    m = 0
    for ti in range(nt):
        f = tree_feats[ti]
        j = 0
        for k in range(n):
            r = sorted_idx[f, k]
            if in_sample[r]:
                ibuf[0, f, j] = r
                vbuf[0, f, j] = sorted_val[f, k]
                j += 1
        m = j

    max_nodes = 2 ** (max_depth + 1) - 1
    feat = np.full(max_nodes, -1, np.int64)
    thr = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes)
    gain_out = np.zeros(max_nodes)
    G = np.zeros(max_nodes)
    H = np.zeros(max_nodes)
    seg_lo = np.zeros(max_nodes, np.int64)
    seg_hi = np.zeros(max_nodes, np.int64)
    for r in range(n):
        if in_sample[r]:
            G[0] += g[r]
            H[0] += h[r]
    seg_hi[0] = m
    f0 = tree_feats[0]

    n_nodes = 1
    cur = 0
    lo, hi = 0, 1  # node ids of the current level
    for depth in range(max_depth):
        if lo == hi:
            break
        nxt = 1 - cur
        for nd in range(lo, hi):
            s, e = seg_lo[nd], seg_hi[nd]
            Gn, Hn = G[nd], H[nd]
            parent = _score(Gn, Hn, alpha, lam) + 2.0 * gamma
            best, accept, bfeat, bthr = 0.0, tie_rtol, -1, 0.0
            for fi in range(level_counts[depth]):
                f = level_feats[depth, fi]
                gl = 0.0
                hl = 0.0
                lastv = vbuf[cur, f, s]
                for k in range(s, e):
                    v = vbuf[cur, f, k]
                    if v != lastv and hl >= min_child_weight:
                        hr = Hn - hl
                        if hr >= min_child_weight:
                            gn = 0.5 * (_score(gl, hl, alpha, lam)
                                        + _score(Gn - gl, hr, alpha, lam) - parent)
                            if gn > accept:
                                best = gn
                                accept = gn + tie_rtol * max(1.0, abs(gn))
                                bfeat = f
                                t = 0.5 * (lastv + v)
                                if t <= lastv:
                                    t = v
                                bthr = t
                    r = ibuf[cur, f, k]
                    gl += g[r]
                    hl += h[r]
                    lastv = v
            if bfeat < 0:
                continue
            feat[nd] = bfeat
            thr[nd] = bthr
            gain_out[nd] = best
            lc, rc = n_nodes, n_nodes + 1
            left[nd] = lc
            right[nd] = rc
            n_nodes += 2
            n_left = 0
            for k in range(s, e):
                r = ibuf[cur, f0, k]
                flag = X[r, bfeat] < bthr
                goes_left[r] = flag
                if flag:
                    n_left += 1
                    G[lc] += g[r]
                    H[lc] += h[r]
                else:
                    G[rc] += g[r]
                    H[rc] += h[r]
            seg_lo[lc], seg_hi[lc] = s, s + n_left
            seg_lo[rc], seg_hi[rc] = s + n_left, e
            if depth == max_depth - 1:
                continue  # children are leaves; their row lists are never scanned
            for ti in range(nt):
                f = tree_feats[ti]
                a, b = s, s + n_left
                for k in range(s, e):
                    r = ibuf[cur, f, k]
                    if goes_left[r]:
                        ibuf[nxt, f, a] = r
                        vbuf[nxt, f, a] = vbuf[cur, f, k]
                        a += 1
                    else:
                        ibuf[nxt, f, b] = r
                        vbuf[nxt, f, b] = vbuf[cur, f, k]
                        b += 1
        cur = nxt
        lo, hi = hi, n_nodes
    for nd in range(n_nodes):
        if left[nd] < 0:
            a = abs(G[nd]) - alpha
            if a > 0.0:
                value[nd] = -lr * np.sign(G[nd]) * a / (H[nd] + lam)
    return (feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], gain_out[:n_nodes], H[:n_nodes])


@njit(cache=True, error_model="numpy")
def _tree_margin(X, feat, thr, left, right, value, out):
    for r in range(X.shape[0]):
        nd = 0
        while left[nd] >= 0:
            nd = left[nd] if X[r, feat[nd]] < thr[nd] else right[nd]
        out[r] += value[nd]


@njit(cache=True, error_model="numpy")
def _forest_margin(X, feat, thr, left, right, value, offsets, base, out):
    for r in range(X.shape[0]):
        s = base
        for t in range(len(offsets) - 1):
            o = offsets[t]
            nd = 0
            while left[o + nd] >= 0:
                nd = left[o + nd] if X[r, feat[o + nd]] < thr[o + nd] else right[o + nd]
            s += value[o + nd]
        out[r] = s


def _sigmoid(m):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(m, dtype=float)))


def _logloss(y, p):
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def _sample_count(ratio: float, n: int) -> int:
    return max(1, min(n, int(round(ratio * n))))


def _check_matrix(X, what: str) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise FitError(f"{what}: expected a 2-D matrix with at least one feature")
    if not np.isfinite(X).all():
        raise ArithmeticError(f"{what}: non-finite feature value")
    return X


def _presort(X):
    """Per-feature row order and sorted values, one contiguous row per feature."""
    idx = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int32))
    return idx, np.take_along_axis(X.T, idx, axis=1).copy()


def _workspace(n: int, d: int):
    return (np.empty((2, d, n), np.int32), np.empty((2, d, n)), np.zeros(n, np.bool_))


def _make_tree(arrs) -> Tree:
    f, t, l, r, v, gn, c = (np.array(a) for a in arrs)
    return Tree(f, t, l, r, v, gn, c)


def find_best_split(X, g, h, hp: Hyperparameters, features: Sequence[int] | None = None,
                    rows: Sequence[int] | None = None) -> SplitDecision | None:
    """Best single partition of ``rows`` (all rows by default) by exact greedy scan."""
    X = _check_matrix(X, "find_best_split")
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    n, d = X.shape
    in_sample = np.zeros(n, np.bool_)
    in_sample[np.arange(n) if rows is None else np.asarray(rows, dtype=np.int64)] = True
    if not in_sample.any():
        raise ValueError("empty instance set")
    feats = np.arange(d) if features is None else np.sort(np.asarray(features, dtype=np.int64))
    arrs = _grow_tree(X, *_presort(X), g, h, in_sample, feats, feats.reshape(1, -1),
                      np.array([len(feats)]), 1, hp.min_child_weight, hp.l1_alpha,
                      hp.l2_lambda, hp.split_gamma, 1.0, TIE_RTOL, *_workspace(n, d))
    tree = _make_tree(arrs)
    if tree.left[0] < 0:
        return None
    return SplitDecision(int(tree.feature[0]), float(tree.threshold[0]), float(tree.gain[0]))


def fit(X, y, hp: Hyperparameters, seed: int = 0, X_valid=None, y_valid=None,
        feature_names: Sequence[str] | None = None, early_stopping: bool = True) -> GbdtModel:
    """Boost ``hp.n_estimators`` trees; with a validation set, stop after
    ceil(0.1 * n_estimators) rounds without improvement in validation log loss."""
    X = _check_matrix(X, "train")
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if len(y) != n:
        raise FitError("train labels and features differ in length")
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise FitError("labels must be 0/1")
    prior = y.mean()
    if prior in (0.0, 1.0):
        raise FitError("training data contains a single class")
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{j}" for j in range(d))
    has_valid = X_valid is not None
    if has_valid:
        Xv = _check_matrix(X_valid, "valid") if len(X_valid) else None
        if Xv is None:
            raise ValueError("early stopping needs a non-empty validation set")
        yv = np.asarray(y_valid, dtype=float)
        if Xv.shape[1] != d or len(yv) != len(Xv):
            raise FitError("validation set shape does not match training set")
    elif early_stopping and y_valid is not None:
        raise ValueError("early stopping needs a non-empty validation set")

    rng = np.random.default_rng(seed)
    base = float(np.log(prior / (1.0 - prior)))
    sorted_idx, sorted_val = _presort(X)
    work = _workspace(n, d)
    margin = np.full(n, base)
    vmargin = np.full(len(Xv), base) if has_valid else None
    patience = math.ceil(0.1 * hp.n_estimators)
    trees: list[Tree] = []
    losses: list[float] = []
    best_loss, best_iter = math.inf, 0
    n_rows = _sample_count(hp.subsample, n)
    n_tree_feats = _sample_count(hp.colsample_bytree, d)
    n_level_feats = _sample_count(hp.colsample_bylevel, n_tree_feats)
    level_feats = np.empty((hp.max_depth, n_level_feats), np.int64)
    level_counts = np.full(hp.max_depth, n_level_feats, np.int64)

    for it in range(hp.n_estimators):
        g, h = grad_hess_logloss(y, margin)
        if n_rows < n:
            in_sample = np.zeros(n, np.bool_)
            in_sample[rng.choice(n, n_rows, replace=False)] = True
        else:
            in_sample = np.ones(n, np.bool_)
        tree_feats = (np.sort(rng.choice(d, n_tree_feats, replace=False))
                      if n_tree_feats < d else np.arange(d))
        for depth in range(hp.max_depth):
            level_feats[depth] = (np.sort(rng.choice(tree_feats, n_level_feats, replace=False))
                                  if n_level_feats < n_tree_feats else tree_feats)
        tree = _make_tree(_grow_tree(
            X, sorted_idx, sorted_val, g, h, in_sample, tree_feats, level_feats, level_counts, hp.max_depth,
            hp.min_child_weight, hp.l1_alpha, hp.l2_lambda, hp.split_gamma,
            hp.learning_rate, TIE_RTOL, *work))
        trees.append(tree)
        _tree_margin(X, tree.feature, tree.threshold, tree.left, tree.right, tree.value, margin)
        if has_valid:
            _tree_margin(Xv, tree.feature, tree.threshold, tree.left, tree.right, tree.value, vmargin)
            loss = _logloss(yv, _sigmoid(vmargin))
            losses.append(loss)
            if loss < best_loss:
                best_loss, best_iter = loss, it + 1
            elif early_stopping and it + 1 - best_iter >= patience:
                break
    if not has_valid:
        best_iter = len(trees)
    return GbdtModel(trees, base, hp.learning_rate, best_iter, names, hp, losses)


# ----------------------------------------------------------------- inference

def _flatten(trees: Sequence[Tree]):
    if not trees:
        z = np.zeros(0)
        zi = np.zeros(0, np.int64)
        return zi, z, zi, zi, z, np.zeros(1, np.int64)
    offsets = np.cumsum([0] + [t.n_nodes for t in trees]).astype(np.int64)
    feat = np.concatenate([t.feature for t in trees])
    thr = np.concatenate([t.threshold for t in trees])
    left = np.concatenate([t.left for t in trees])
    right = np.concatenate([t.right for t in trees])
    value = np.concatenate([t.value for t in trees])
    return feat, thr, left, right, value, offsets


def predict_margin(model: GbdtModel, X, n_trees: int | None = None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise InferenceError(f"expected {model.n_features} features, got shape {X.shape}")
    trees = model.trees[:model.best_iteration if n_trees is None else n_trees]
    out = np.empty(len(X))
    _forest_margin(X, *_flatten(trees), model.base_score, out)
    return out


def predict_proba(model: GbdtModel, X, n_trees: int | None = None):
    """Probability of the distracted class for a matrix, or for one ``FeatureVector``."""
    if isinstance(X, FeatureVector):
        missing = [n for n in model.feature_names if n not in X.values]
        if missing:
            raise InferenceError(f"feature vector lacks {missing}")
        row = np.array([[X.values[n] for n in model.feature_names]])
        return float(_sigmoid(predict_margin(model, row, n_trees))[0])
    return _sigmoid(predict_margin(model, X, n_trees))


def builtin_importance(model: GbdtModel, kind: str = "weight") -> dict[str, float]:
    """Split-count (``weight``) or mean split gain (``gain``) per feature, normalised to sum 1."""
    if kind not in ("weight", "gain"):
        raise ValueError(f"unknown importance kind {kind!r}")
    count = np.zeros(model.n_features)
    total_gain = np.zeros(model.n_features)
    for tree in model.used_trees():
        for s in tree.splits():
            count[s.feature] += 1
            total_gain[s.feature] += s.gain
    if kind == "weight":
        score = count
    else:
        score = np.divide(total_gain, count, out=np.zeros_like(total_gain), where=count > 0)
    total = score.sum()
    if total > 0:
        score = score / total
    return {name: float(v) for name, v in zip(model.feature_names, score)}


# ------------------------------------------------------------- serialization

def model_to_dict(model: GbdtModel) -> dict:
    return {
        "schema": "autogbm.model",
        "version": SCHEMA_VERSION,
        "hyperparameters": asdict(model.hyperparameters),
        "feature_names": list(model.feature_names),
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "best_iteration": model.best_iteration,
        "valid_loss": list(model.valid_loss),
        "trees": [
            {
                "nodes": [
                    {"id": i, "feature": int(t.feature[i]), "threshold": float(t.threshold[i]),
                     "left": int(t.left[i]), "right": int(t.right[i]), "value": float(t.value[i]),
                     "gain": float(t.gain[i]), "cover": float(t.cover[i])}
                    for i in range(t.n_nodes)
                ]
            }
            for t in model.trees
        ],
    }


def model_from_dict(doc: dict) -> GbdtModel:
    if doc.get("schema") != "autogbm.model":
        raise ValueError("not a serialized autogbm model")
    trees = []
    for t in doc["trees"]:
        nodes = sorted(t["nodes"], key=lambda nd: nd["id"])
        col = lambda k, dt: np.array([nd[k] for nd in nodes], dtype=dt)  # noqa: E731
        trees.append(Tree(col("feature", np.int64), col("threshold", float), col("left", np.int64),
                          col("right", np.int64), col("value", float), col("gain", float),
                          col("cover", float)))
    return GbdtModel(trees, float(doc["base_score"]), float(doc["learning_rate"]),
                     int(doc["best_iteration"]), tuple(doc["feature_names"]),
                     Hyperparameters(**doc["hyperparameters"]), list(doc.get("valid_loss", [])))


def save_model(model: GbdtModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> GbdtModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
