"""The 19 lane-keeping features: five window metrics applied to seven signals."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import SIGNALS, Window

EPS = 1e-12

SIGNAL_PREFIX = {
    "lat_vel": "LV", "lat_acc": "LA", "yaw_vel": "YV", "yaw_acc": "YA",
    "ld_center": "LD", "ld_left": "LDL", "ld_right": "LDR",
}

# (signal, metric) pairs in canonical column order
FEATURE_SPECS: tuple[tuple[str, str], ...] = (
    *((s, "mean") for s in SIGNALS),
    *((s, "sd") for s in SIGNALS),
    ("ld_center", "range"),
    ("ld_left", "cv"), ("ld_right", "cv"),
    ("ld_left", "qcv"), ("ld_right", "qcv"),
)
_SUFFIX = {"mean": "M", "sd": "SD", "range": "R", "cv": "Cv", "qcv": "Qcv"}
FEATURE_NAMES: tuple[str, ...] = tuple(f"{SIGNAL_PREFIX[s]}_{_SUFFIX[m]}" for s, m in FEATURE_SPECS)
METADATA_COLUMNS = ("driver_id", "task", "window_idx", "label")


class ExtractionError(ValueError):
    pass


@dataclass
class Aggregate:
    value: float
    degenerate: bool = False


def quantile(x: np.ndarray, q: float) -> float:
    """Linear interpolation between order statistics (position (n-1)q)."""
    s = np.sort(x)
    pos = (len(s) - 1) * q
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return float(s[lo] + (pos - lo) * (s[hi] - s[lo]))


def aggregate_checked(series: Sequence[float], metric: str) -> Aggregate:
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("empty series")
    if metric in ("sd", "cv", "qcv") and x.size < 2:
        raise ValueError(f"{metric} needs at least 2 values")
    if metric == "mean":
        return Aggregate(float(x.mean()))
    if metric == "range":
        return Aggregate(float(x.max() - x.min()))
    if metric == "sd":
        return Aggregate(float(x.std(ddof=1)))
    if metric == "cv":
        m = float(x.mean())
        if abs(m) < EPS:
            return Aggregate(0.0, True)
        return Aggregate(float(x.std(ddof=1)) / m)
    if metric == "qcv":
        q1, q3 = quantile(x, 0.25), quantile(x, 0.75)
        if abs(q3 + q1) < EPS:
            return Aggregate(0.0, True)
        return Aggregate((q3 - q1) / (q3 + q1))
    raise ValueError(f"unknown metric {metric!r}")


def aggregate(series: Sequence[float], metric: str) -> float:
    return aggregate_checked(series, metric).value


@dataclass
class FeatureVector:
    values: dict[str, float]
    label: int
    task: str
    driver_id: str
    window_idx: int
    drive_id: str = ""
    degenerate: list[str] = field(default_factory=list)

    def as_array(self) -> np.ndarray:
        return np.array([self.values[n] for n in FEATURE_NAMES])


def extract_features(window: Window) -> FeatureVector:
    for s in SIGNALS:
        bad = np.flatnonzero(~np.isfinite(window.signals[s]))
        if bad.size:
            raise ExtractionError(f"non-finite {s} at sample {int(bad[0])} of window {window.index}")
    values, degenerate = {}, []
    for name, (s, metric) in zip(FEATURE_NAMES, FEATURE_SPECS):
        agg = aggregate_checked(window.signals[s], metric)
        values[name] = agg.value
        if agg.degenerate:
            degenerate.append(name)
    return FeatureVector(values, window.label, window.task, window.driver_id, window.index,
                         window.drive_id, degenerate)


@dataclass
class FeatureTable:
    """Feature matrix with per-row metadata; the unit every downstream stage consumes."""

    X: np.ndarray
    y: np.ndarray
    names: tuple[str, ...]
    driver_id: np.ndarray
    drive_id: np.ndarray
    task: np.ndarray
    window_idx: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, rows=None, columns: Sequence[str] | None = None) -> "FeatureTable":
        rows = slice(None) if rows is None else rows
        if columns is None:
            cols, names = slice(None), self.names
        else:
            cols, names = [self.names.index(c) for c in columns], tuple(columns)
        return FeatureTable(self.X[rows][:, cols], self.y[rows], names, self.driver_id[rows],
                            self.drive_id[rows], self.task[rows], self.window_idx[rows])

    def groups(self) -> np.ndarray:
        return np.array([f"{a}/{b}" for a, b in zip(self.driver_id, self.drive_id)])


def build_table(vectors: Sequence[FeatureVector]) -> FeatureTable:
    X = np.array([v.as_array() for v in vectors]).reshape(len(vectors), len(FEATURE_NAMES))
    return FeatureTable(
        X, np.array([v.label for v in vectors], dtype=np.int64), FEATURE_NAMES,
        np.array([v.driver_id for v in vectors], dtype=str),
        np.array([v.drive_id for v in vectors], dtype=str),
        np.array([v.task for v in vectors], dtype=str),
        np.array([v.window_idx for v in vectors], dtype=np.int64),
    )


def extract_table(windows: Sequence[Window]) -> FeatureTable:
    return build_table([extract_features(w) for w in windows])


def write_features_csv(table: FeatureTable, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*table.names, "drive_id", *METADATA_COLUMNS])
        for i in range(len(table)):
            w.writerow([*(repr(float(v)) for v in table.X[i]), table.drive_id[i],
                        table.driver_id[i], table.task[i], int(table.window_idx[i]),
                        int(table.y[i])])


def read_features_csv(path: str | Path) -> FeatureTable:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    missing = [c for c in (*METADATA_COLUMNS,) if c not in header]
    if missing:
        raise ValueError(f"features file lacks column(s) {missing}")
    meta = set(METADATA_COLUMNS) | {"drive_id"}
    names = tuple(c for c in header if c not in meta)
    idx = {c: header.index(c) for c in header}
    X = np.array([[float(r[idx[n]]) for n in names] for r in rows]).reshape(len(rows), len(names))
    col = lambda c: [r[idx[c]] for r in rows] if c in idx else [""] * len(rows)  # noqa: E731
    return FeatureTable(
        X, np.array([int(v) for v in col("label")], dtype=np.int64), names,
        np.array(col("driver_id"), dtype=str), np.array(col("drive_id"), dtype=str),
        np.array(col("task"), dtype=str), np.array([int(v) for v in col("window_idx")], dtype=np.int64),
    )
