"""Trajectory samples, CSV ingestion, median filtering and 1 s windowing."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TASKS = ("none", "short_msg", "long_msg", "call")
SIGNALS = ("lat_vel", "lat_acc", "yaw_vel", "yaw_acc", "ld_center", "ld_left", "ld_right")
CSV_COLUMNS = ("time_s", "driver_id", "drive_id", "task") + SIGNALS + ("distracted",)
DEFAULT_RATE = 20.0


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


class OrderingError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectorySample:
    time: float
    driver_id: str
    drive_id: str
    task: str
    lat_vel: float
    lat_acc: float
    yaw_vel: float
    yaw_acc: float
    ld_center: float
    ld_left: float
    ld_right: float
    distracted: int


@dataclass
class Drive:
    """One continuous recording, stored column-wise.

    ``signals`` maps each name in ``SIGNALS`` to a float array of equal length.
    """

    driver_id: str
    drive_id: str
    time: np.ndarray
    task: np.ndarray
    signals: dict[str, np.ndarray]
    distracted: np.ndarray

    def __len__(self) -> int:
        return len(self.time)

    def sample(self, i: int) -> TrajectorySample:
        return TrajectorySample(
            float(self.time[i]), self.driver_id, self.drive_id, str(self.task[i]),
            *(float(self.signals[s][i]) for s in SIGNALS), int(self.distracted[i]),
        )


@dataclass
class TrajectoryDataset:
    drives: list[Drive] = field(default_factory=list)
    sample_rate: float = DEFAULT_RATE

    def __len__(self) -> int:
        return sum(len(d) for d in self.drives)

    def drive(self, driver_id: str, drive_id: str) -> Drive:
        for d in self.drives:
            if d.driver_id == driver_id and d.drive_id == drive_id:
                return d
        raise KeyError((driver_id, drive_id))

    def samples(self) -> Iterable[TrajectorySample]:
        for d in self.drives:
            for i in range(len(d)):
                yield d.sample(i)


@dataclass
class Window:
    driver_id: str
    drive_id: str
    index: int
    signals: dict[str, np.ndarray]
    label: int
    task: str

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.signals.values())))


def _validate_drive(drive: Drive, row_offset: int = 0) -> None:
    for side in ("ld_left", "ld_right"):
        neg = np.flatnonzero(drive.signals[side] < 0)
        if neg.size:
            raise ValidationError(f"{side} negative at row {row_offset + int(neg[0]) + 1}")
    bad_label = (drive.distracted == 1) != (drive.task != "none")
    if bad_label.any():
        i = int(np.flatnonzero(bad_label)[0])
        raise ValidationError(
            f"distracted flag inconsistent with task {drive.task[i]!r} at row {row_offset + i + 1}")
    if len(drive.time) > 1:
        dt = np.diff(drive.time)
        if (dt <= 0).any():
            i = int(np.flatnonzero(dt <= 0)[0]) + 1
            raise OrderingError(
                f"time not strictly increasing in drive {drive.driver_id}/{drive.drive_id} "
                f"at row {row_offset + i + 1}")


def parse_trajectory_csv(path: str | Path, sample_rate: float = DEFAULT_RATE) -> TrajectoryDataset:
    """Read a trajectory CSV. Row numbers in errors count data rows from 1."""
    path = Path(path)
    rows_by_drive: dict[tuple[str, str], list[tuple[int, list[str]]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in CSV_COLUMNS:
            if col not in header:
                raise SchemaError(f"missing column {col!r}")
        for col in header:
            if col not in CSV_COLUMNS:
                raise SchemaError(f"unexpected column {col!r}")
        if len(header) != len(set(header)):
            raise SchemaError("duplicate column in header")
        pos = {c: header.index(c) for c in CSV_COLUMNS}
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"row {rownum}: expected {len(header)} fields, got {len(row)}")
            key = (row[pos["driver_id"]], row[pos["drive_id"]])
            rows_by_drive.setdefault(key, []).append((rownum, row))

    drives = []
    for (driver_id, drive_id), rows in rows_by_drive.items():
        n = len(rows)
        time = np.empty(n)
        sig = {s: np.empty(n) for s in SIGNALS}
        task = np.empty(n, dtype=object)
        distracted = np.empty(n, dtype=np.int8)
        for j, (rownum, row) in enumerate(rows):
            try:
                time[j] = float(row[pos["time_s"]])
                for s in SIGNALS:
                    sig[s][j] = float(row[pos[s]])
                flag = row[pos["distracted"]].strip()
                if flag not in ("0", "1"):
                    raise ValueError(f"distracted must be 0 or 1, got {flag!r}")
                distracted[j] = int(flag)
            except ValueError as exc:
                raise ParseError(f"row {rownum}: {exc}") from None
            t = row[pos["task"]].strip()
            if t not in TASKS:
                raise ParseError(f"row {rownum}: unknown task {t!r}")
            task[j] = t
            if not all(math.isfinite(sig[s][j]) for s in SIGNALS) or not math.isfinite(time[j]):
                raise ParseError(f"row {rownum}: non-finite value")
        drive = Drive(driver_id, drive_id, time, task.astype(str), sig, distracted)
        _validate_drive(drive, row_offset=rows[0][0] - 1)
        drives.append(drive)
    return TrajectoryDataset(drives, sample_rate)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_csv(dataset: TrajectoryDataset, path: str | Path) -> None:
    """Write at full precision; ``parse_trajectory_csv`` reads it back bit-exactly."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for d in dataset.drives:
            cols = [d.signals[s] for s in SIGNALS]
            for i in range(len(d)):
                w.writerow([_fmt(d.time[i]), d.driver_id, d.drive_id, d.task[i],
                            *(_fmt(c[i]) for c in cols), int(d.distracted[i])])


def median_filter(series: Sequence[float], window: int) -> np.ndarray:
    """Centered moving median; window indices past either end are clamped to the
    nearest sample, so edges see repeated copies of the first or last value."""
    x = np.asarray(series, dtype=float)
    if not isinstance(window, (int, np.integer)) or window < 1 or window % 2 == 0:
        raise ValueError(f"window must be an odd positive integer, got {window!r}")
    if window > len(x):
        raise ValueError(f"window {window} longer than series ({len(x)})")
    if window == 1:
        return x.copy()
    half = window // 2
    padded = np.pad(x, half, mode="edge")
    return np.median(np.lib.stride_tricks.sliding_window_view(padded, window), axis=1)


def filter_dataset(dataset: TrajectoryDataset, window: int = 5) -> TrajectoryDataset:
    drives = []
    for d in dataset.drives:
        w = min(window, len(d) if len(d) % 2 else len(d) - 1)
        sig = {s: median_filter(v, w) if w >= 1 else v.copy() for s, v in d.signals.items()}
        drives.append(Drive(d.driver_id, d.drive_id, d.time.copy(), d.task.copy(), sig,
                            d.distracted.copy()))
    return TrajectoryDataset(drives, dataset.sample_rate)


def samples_per_window(window_seconds: float, rate: float) -> int:
    n = window_seconds * rate
    if n <= 0 or abs(n - round(n)) > 1e-9:
        raise ValueError(f"window of {window_seconds} s at {rate} Hz is not a whole number of samples")
    return int(round(n))


def _window_task(tasks: np.ndarray, label: int) -> str:
    if not label:
        return "none"
    active = [t for t in tasks if t != "none"]
    # most frequent task among distracted samples; ties go to the earliest
    counts: dict[str, int] = {}
    for t in active:
        counts[t] = counts.get(t, 0) + 1
    return max(counts, key=lambda t: (counts[t], -active.index(t)))


def window_segments(dataset: TrajectoryDataset, window_seconds: float = 1.0) -> list[Window]:
    """Cut every drive into aligned, non-overlapping windows and drop the partial tail."""
    n = samples_per_window(window_seconds, dataset.sample_rate)
    out = []
    for d in dataset.drives:
        for k in range(len(d) // n):
            sl = slice(k * n, (k + 1) * n)
            flags = d.distracted[sl]
            label = int(2 * int(flags.sum()) >= n)
            out.append(Window(d.driver_id, d.drive_id, k,
                              {s: d.signals[s][sl] for s in SIGNALS}, label,
                              _window_task(d.task[sl], label)))
    return out
