"""Synthetic lane-keeping drives with a planted distraction effect.

Lateral offset from the lane centre follows a noise-driven, critically damped
spring (a discretised mean-reverting process). Inside a distraction episode the
noise scale is multiplied and occasional drift-and-correct excursions are
injected. All effect sizes are synthetic; nothing here is calibrated to real
drivers.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DEFAULT_RATE, SIGNALS, Drive, TrajectoryDataset
from .features import FEATURE_NAMES, FeatureTable

SUBTASKS = ("short_msg", "call", "long_msg")
DEFAULT_DURATION = 660.0  # s, an 11-minute drive
NOMINAL_SPEED = 60 / 3.6  # m/s
LANE_HALF_WIDTH = 1.875  # m, 3.75 m lane


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class DriverProfile:
    driver_id: str
    noise_scale: float = 0.35  # m/s^2 per sqrt(s), lateral acceleration noise
    reversion_rate: float = 0.6  # 1/s
    distraction_multiplier: float = 2.2
    drift_rate: float = 0.08  # events/s during distraction
    drift_accel: float = 0.25  # m/s^2, bias held during a drift event
    speed: float = NOMINAL_SPEED
    lane_half_width: float = LANE_HALF_WIDTH

    def __post_init__(self):
        if self.distraction_multiplier < 1:
            raise ValueError("distraction multiplier must be >= 1")
        for name in ("noise_scale", "reversion_rate", "speed", "lane_half_width"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.drift_rate < 0 or self.drift_accel < 0:
            raise ValueError("drift parameters must be non-negative")


@dataclass(frozen=True)
class Episode:
    start: float
    duration: float
    task: str

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class EpisodePlan:
    episodes: tuple[Episode, ...] = ()

    def validate(self, duration: float) -> None:
        eps = sorted(self.episodes, key=lambda e: e.start)
        for e in eps:
            if e.task not in SUBTASKS:
                raise PlanError(f"unknown subtask {e.task!r}")
            if e.start < 0 or e.duration <= 0 or e.end > duration:
                raise PlanError(f"episode {e} does not fit inside a {duration} s drive")
        for a, b in zip(eps, eps[1:]):
            if b.start < a.end:
                raise PlanError(f"episodes overlap: {a} and {b}")

    def distracted_fraction(self, duration: float) -> float:
        return sum(e.duration for e in self.episodes) / duration


def default_plan(duration: float = DEFAULT_DURATION, rng: np.random.Generator | None = None
                 ) -> EpisodePlan:
    """Short message, call and long message, one per third of the drive."""
    rng = rng or np.random.default_rng(0)
    slot = duration / 3
    base = {"short_msg": 0.45, "call": 0.55, "long_msg": 0.6}  # fraction of a slot
    episodes = []
    for i, task in enumerate(SUBTASKS):
        length = slot * base[task] * rng.uniform(0.85, 1.15)
        lead = rng.uniform(0.1, 0.9) * (slot - length)
        episodes.append(Episode(round(i * slot + lead, 2), round(length, 2), task))
    return EpisodePlan(tuple(episodes))


def _task_track(plan: EpisodePlan, n: int, rate: float) -> np.ndarray:
    task = np.full(n, "none", dtype=object)
    t = np.arange(n) / rate
    for e in plan.episodes:
        task[(t >= e.start) & (t < e.end)] = e.task
    return task.astype(str)


def simulate_positions(profile: DriverProfile, active: np.ndarray, rate: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Lateral offsets for ``len(active)`` steps; ``active`` flags distracted steps."""
    n = len(active)
    dt = 1.0 / rate
    kp = profile.reversion_rate ** 2
    kd = 2.0 * profile.reversion_rate
    scale = np.where(active, profile.noise_scale * profile.distraction_multiplier,
                     profile.noise_scale)
    shocks = rng.standard_normal(n) * scale / math.sqrt(dt)
    drift = np.zeros(n)
    if profile.drift_rate > 0 and profile.drift_accel > 0:
        events = rng.uniform(size=n) < profile.drift_rate * dt
        lengths = rng.uniform(1.0, 3.0, size=n)
        signs = rng.choice((-1.0, 1.0), size=n)
        for k in np.flatnonzero(events & active):
            stop = min(n, k + int(round(lengths[k] * rate)))
            drift[k:stop] += signs[k] * profile.drift_accel
    y = np.empty(n)
    pos = rng.normal(0.0, 0.05)
    vel = 0.0
    for k in range(n):
        y[k] = pos
        acc = -kp * pos - kd * vel + shocks[k] + drift[k]
        vel += acc * dt
        pos += vel * dt
    return y


def simulate_drive(profile: DriverProfile, plan: EpisodePlan, duration: float = DEFAULT_DURATION,
                   rate: float = DEFAULT_RATE, seed=0, drive_id: str = "drive") -> TrajectoryDataset:
    if rate <= 0:
        raise ValueError("rate must be positive")
    plan.validate(duration)
    n = int(round(duration * rate))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    task = _task_track(plan, n + 3, rate)
    y = simulate_positions(profile, task != "none", rate, rng)
    dt = 1.0 / rate
    vel = np.diff(y) / dt  # forward differences; sample i sees the step i -> i+1
    acc = np.diff(vel) / dt
    yaw = np.arctan(vel / profile.speed)
    yaw_vel = np.diff(yaw) / dt
    yaw_acc = np.diff(yaw_vel) / dt
    w = profile.lane_half_width
    centre = y[:n]
    signals = {
        "lat_vel": vel[:n], "lat_acc": acc[:n], "yaw_vel": yaw_vel[:n], "yaw_acc": yaw_acc[:n],
        "ld_center": centre, "ld_left": np.abs(w - centre), "ld_right": np.abs(w + centre),
    }
    task = task[:n]
    drive = Drive(profile.driver_id, drive_id, np.arange(n) / rate, task,
                  {s: np.ascontiguousarray(signals[s]) for s in SIGNALS},
                  (task != "none").astype(np.int8))
    return TrajectoryDataset([drive], rate)


# -------------------------------------------------------------------- cohorts

SPREADS = {
    # mean distraction multiplier, its jitter, drift rate
    "default": dict(multiplier=2.2, multiplier_sd=0.25, drift_rate=0.08),
    "risky": dict(multiplier=3.0, multiplier_sd=0.25, drift_rate=0.12),
    "conservative": dict(multiplier=1.35, multiplier_sd=0.1, drift_rate=0.02),
    "null": dict(multiplier=1.0, multiplier_sd=0.0, drift_rate=0.0),
}


def drive_seed(seed: int, driver_index: int, drive_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, driver_index, drive_index])


def jitter_profile(driver_id: str, spread: str | dict, rng: np.random.Generator) -> DriverProfile:
    spec = SPREADS[spread] if isinstance(spread, str) else spread
    mult = max(1.0, spec["multiplier"] + spec["multiplier_sd"] * rng.standard_normal())
    return DriverProfile(
        driver_id=driver_id,
        noise_scale=float(0.35 * math.exp(0.2 * rng.standard_normal())),
        reversion_rate=float(0.6 * math.exp(0.15 * rng.standard_normal())),
        distraction_multiplier=float(mult),
        drift_rate=float(spec["drift_rate"]),
    )


@dataclass
class CohortManifest:
    seed: int
    spread: str | dict
    duration: float
    rate: float
    drivers: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def generate_cohort(n_drivers: int, spread: str | dict = "default", seed: int = 0,
                    duration: float = DEFAULT_DURATION, rate: float = DEFAULT_RATE
                    ) -> tuple[TrajectoryDataset, CohortManifest]:
    """One baseline and one distracted drive per driver, each with its own RNG stream."""
    if n_drivers < 1:
        raise ValueError("n_drivers must be >= 1")
    manifest = CohortManifest(seed, spread, duration, rate)
    drives = []
    for i in range(n_drivers):
        driver_id = f"D{i + 1:02d}"
        prof_rng = np.random.default_rng(drive_seed(seed, i, 99))
        profile = jitter_profile(driver_id, spread, prof_rng)
        plan = default_plan(duration, prof_rng)
        entry = {"profile": asdict(profile), "drives": []}
        for j, (drive_id, p) in enumerate((("baseline", EpisodePlan()), ("distracted", plan))):
            ss = drive_seed(seed, i, j)
            ds = simulate_drive(profile, p, duration, rate, np.random.default_rng(ss), drive_id)
            drives.extend(ds.drives)
            entry["drives"].append({"drive_id": drive_id, "seed": [seed, i, j],
                                    "episodes": [asdict(e) for e in p.episodes]})
        manifest.drivers.append(entry)
    return TrajectoryDataset(drives, rate), manifest


def planted_feature_table(n_drivers: int = 4, windows_per_driver: int = 400,
                          signal: Sequence[str] = ("LDL_SD", "LDR_SD"), effect: float = 1.0,
                          positive_fraction: float = 0.35, seed: int = 0) -> FeatureTable:
    """Window-level feature table whose label depends on ``signal`` columns only.

    Every column is a log-normal driver offset plus per-window noise. For
    distracted windows the ``signal`` columns are shifted by ``effect`` noise
    standard deviations; all other columns are label-independent. Each signal
    column gets independent noise, so each carries information of its own.
    """
    rng = np.random.default_rng(seed)
    names = FEATURE_NAMES
    sig = [names.index(s) for s in signal]
    rows, labels, drivers, windows = [], [], [], []
    for i in range(n_drivers):
        offset = rng.normal(0.0, 0.3, size=len(names))
        y = (rng.uniform(size=windows_per_driver) < positive_fraction).astype(np.int64)
        X = offset + rng.standard_normal((windows_per_driver, len(names)))
        X[:, sig] += effect * y[:, None]
        rows.append(X)
        labels.append(y)
        drivers += [f"D{i + 1:02d}"] * windows_per_driver
        windows.append(np.arange(windows_per_driver))
    X = np.vstack(rows)
    y = np.concatenate(labels)
    return FeatureTable(X, y, names, np.array(drivers), np.array(["planted"] * len(y)),
                        np.where(y == 1, "long_msg", "none"), np.concatenate(windows))


def with_profile(profile: DriverProfile, **changes) -> DriverProfile:
    return replace(profile, **changes)
