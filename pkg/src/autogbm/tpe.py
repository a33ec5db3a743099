"""Tree-structured Parzen Estimator search over a flat hyperparameter space.

Completed trials are split at the ``gamma`` loss quantile into a good set and a
bad set. Each parameter gets two Parzen densities, ``l`` from the good values
and ``g`` from the bad ones. Candidates drawn from ``l`` are ranked by
``l(x) / g(x)``; expected improvement is monotone in that ratio.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

log = logging.getLogger(__name__)

KINDS = ("uniform_real", "log_uniform_real", "uniform_int", "categorical")


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    choices: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.choices or len(set(self.choices)) != len(self.choices):
                raise ValueError(f"{self.name}: choices must be non-empty and distinct")
        else:
            if self.low is None or self.high is None or not self.low < self.high:
                raise ValueError(f"{self.name}: need low < high")
            if self.kind == "log_uniform_real" and self.low <= 0:
                raise ValueError(f"{self.name}: log-uniform bounds must be positive")
            if self.kind == "uniform_int" and (self.low != int(self.low) or self.high != int(self.high)):
                raise ValueError(f"{self.name}: integer bounds required")

    def contains(self, value) -> bool:
        if self.kind == "categorical":
            return value in self.choices
        if self.kind == "uniform_int" and value != int(value):
            return False
        return self.low <= value <= self.high

    # internal continuous coordinates for the numeric kinds
    def internal_bounds(self) -> tuple[float, float]:
        if self.kind == "log_uniform_real":
            return math.log(self.low), math.log(self.high)
        if self.kind == "uniform_int":
            return self.low - 0.5, self.high + 0.5
        return float(self.low), float(self.high)

    def to_internal(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        return np.log(v) if self.kind == "log_uniform_real" else v

    def from_internal(self, z: float):
        if self.kind == "log_uniform_real":
            return float(min(max(math.exp(z), self.low), self.high))
        if self.kind == "uniform_int":
            return int(min(max(math.floor(z + 0.5), self.low), self.high))
        return float(min(max(z, self.low), self.high))


SearchSpace = tuple[ParamSpec, ...]


def default_search_space() -> SearchSpace:
    """The ten boosting hyperparameters and their sampling distributions."""
    return (
        ParamSpec("n_estimators", "uniform_int", 30, 150),
        ParamSpec("learning_rate", "log_uniform_real", 0.05, 0.3),
        ParamSpec("colsample_bylevel", "uniform_real", 0.6, 1.0),
        ParamSpec("colsample_bytree", "uniform_real", 0.6, 1.0),
        ParamSpec("subsample", "uniform_real", 0.6, 1.0),
        ParamSpec("max_depth", "categorical", choices=(3, 4, 5, 6)),
        ParamSpec("min_child_weight", "uniform_real", 0.6, 1.0),
        ParamSpec("l1_alpha", "uniform_real", 0.0, 1.0),
        ParamSpec("split_gamma", "uniform_real", 0.0, 1.0),
        ParamSpec("l2_lambda", "uniform_real", 0.4, 1.0),
    )


def validate_space(space: Sequence[ParamSpec]) -> None:
    names = [p.name for p in space]
    if len(names) != len(set(names)):
        raise ValueError("parameter names must be unique")


@dataclass
class Trial:
    id: int
    params: dict[str, Any]
    loss: float = math.nan
    status: str = "ok"
    report: Any = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class TrialHistory:
    space: SearchSpace
    trials: list[Trial] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trials)

    def ok_trials(self) -> list[Trial]:
        return [t for t in self.trials if t.ok]

    @property
    def best(self) -> Trial:
        ok = self.ok_trials()
        if not ok:
            raise OptimizationError("no successful trials")
        return min(ok, key=lambda t: (t.loss, t.id))

    def top(self, k: int) -> list[Trial]:
        return sorted(self.ok_trials(), key=lambda t: (t.loss, t.id))[:k]

    def best_so_far(self) -> list[float]:
        out, cur = [], math.inf
        for t in self.trials:
            if t.ok and t.loss < cur:
                cur = t.loss
            out.append(cur)
        return out

    def rows(self) -> list[dict[str, Any]]:
        rows = []
        for t, best in zip(self.trials, self.best_so_far()):
            rows.append({"iteration": t.id, "status": t.status, "loss": t.loss,
                         "best_so_far": best, **{p.name: t.params[p.name] for p in self.space}})
        return rows


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_trials_csv(history: TrialHistory, path: str | Path) -> None:
    names = [p.name for p in history.space]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "status", "loss", *names])
        for r in history.rows():
            w.writerow([r["iteration"], r["status"], _fmt(r["loss"]), *(_fmt(r[n]) for n in names)])


def read_trials_csv(path: str | Path, space: SearchSpace | None = None) -> TrialHistory:
    space = space or default_search_space()
    by_name = {p.name: p for p in space}
    trials = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            params = {}
            for name, spec in by_name.items():
                raw = row[name]
                if spec.kind == "uniform_int":
                    params[name] = int(raw)
                elif spec.kind == "categorical":
                    params[name] = next(c for c in spec.choices if str(c) == raw)
                else:
                    params[name] = float(raw)
            trials.append(Trial(int(row["iteration"]), params, float(row["loss"]), row["status"]))
    return TrialHistory(space, trials)


# ------------------------------------------------------------------ sampling

def sample_param(spec: ParamSpec, rng: np.random.Generator):
    if spec.kind == "categorical":
        return spec.choices[int(rng.integers(len(spec.choices)))]
    if spec.kind == "uniform_int":
        return int(rng.integers(int(spec.low), int(spec.high) + 1))
    lo, hi = spec.internal_bounds()
    return spec.from_internal(rng.uniform(lo, hi))


def sample_prior(space: Sequence[ParamSpec], rng: np.random.Generator) -> dict[str, Any]:
    return {p.name: sample_param(p, rng) for p in space}


def split_trials(trials: Sequence[Trial], gamma: float = 0.25) -> tuple[list[Trial], list[Trial]]:
    ok = sorted((t for t in trials if t.ok), key=lambda t: (t.loss, t.id))
    if not ok:
        raise OptimizationError("cannot split: no successful trials")
    n_good = max(1, math.floor(gamma * len(ok)))
    return ok[:n_good], ok[n_good:]


class ParzenEstimator:
    """One-dimensional Parzen density over a parameter's domain.

    Numeric kinds mix a flat prior over the domain with one truncated normal per
    observation, all equally weighted. Kernel width is the larger of
    ``span / (1 + n)`` and the distance to the nearest other observation.
    Integers are scored by the mass of their unit bin; log-uniform parameters
    are modelled in log space. Categoricals use add-one smoothed frequencies.
    """

    def __init__(self, spec: ParamSpec, values: Sequence):
        self.spec = spec
        values = list(values)
        for v in values:
            if not spec.contains(v):
                raise ValueError(f"{spec.name}: observation {v!r} outside the domain")
        if spec.kind == "categorical":
            counts = np.array([sum(1 for v in values if v == c) for c in spec.choices], float)
            self.probs = (counts + 1.0) / (len(values) + len(spec.choices))
            return
        self.lo, self.hi = spec.internal_bounds()
        span = self.hi - self.lo
        mu = spec.to_internal(values) if values else np.zeros(0)
        n = len(mu)
        sigma = np.full(n, span / (1.0 + n))
        if n > 1:
            order = np.argsort(mu, kind="stable")
            srt = mu[order]
            gaps = np.diff(srt)
            nearest = np.minimum(np.r_[np.inf, gaps], np.r_[gaps, np.inf])
            sigma[order] = np.maximum(sigma[order], nearest)
        self.mu, self.sigma = mu, sigma
        self.weights = np.full(n + 1, 1.0 / (n + 1))  # index 0 is the flat prior
        self._a = (self.lo - mu) / sigma
        self._b = (self.hi - mu) / sigma
        self._z = ndtr(self._b) - ndtr(self._a)

    @property
    def n_obs(self) -> int:
        return 0 if self.spec.kind == "categorical" else len(self.mu)

    def sample(self, rng: np.random.Generator, size: int) -> list:
        spec = self.spec
        if spec.kind == "categorical":
            idx = rng.choice(len(spec.choices), size=size, p=self.probs)
            return [spec.choices[i] for i in idx]
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        u = rng.uniform(size=size)
        out = []
        for c, ui in zip(comp, u):
            if c == 0:
                z = self.lo + ui * (self.hi - self.lo)
            else:
                k = c - 1
                pa = ndtr(self._a[k])
                q = pa + ui * self._z[k]
                z = self.mu[k] + self.sigma[k] * float(ndtri(min(max(q, 1e-300), 1 - 1e-16)))
                z = min(max(z, self.lo), self.hi)
            out.append(spec.from_internal(z))
        return out

    def logpdf(self, values: Sequence) -> np.ndarray:
        spec = self.spec
        if spec.kind == "categorical":
            return np.log(np.array([self.probs[spec.choices.index(v)] for v in values]))
        span = self.hi - self.lo
        if spec.kind == "uniform_int":
            x = np.asarray(values, dtype=float)[:, None]
            prior = np.full(len(x), 1.0 / span)
            if self.n_obs:
                mass = (ndtr((x + 0.5 - self.mu) / self.sigma)
                        - ndtr((x - 0.5 - self.mu) / self.sigma)) / self._z
                dens = (prior + mass.sum(axis=1)) * self.weights[0]
            else:
                dens = prior
        else:
            x = spec.to_internal(values)[:, None]
            prior = np.full(len(x), 1.0 / span)
            if self.n_obs:
                t = (x - self.mu) / self.sigma
                k = np.exp(-0.5 * t * t) / (math.sqrt(2 * math.pi) * self.sigma * self._z)
                dens = (prior + k.sum(axis=1)) * self.weights[0]
            else:
                dens = prior
        return np.log(dens)

    def pdf(self, values: Sequence) -> np.ndarray:
        return np.exp(self.logpdf(values))


def build_parzen(values: Sequence, spec: ParamSpec) -> ParzenEstimator:
    return ParzenEstimator(spec, values)


@dataclass(frozen=True)
class TpeSettings:
    gamma: float = 0.25
    n_startup: int = 20
    n_candidates: int = 24


def suggest(history: Sequence[Trial], space: Sequence[ParamSpec], rng: np.random.Generator,
            n_candidates: int = 24, gamma: float = 0.25, n_startup: int = 20) -> dict[str, Any]:
    ok = [t for t in history if t.ok]
    if len(ok) < max(n_startup, 1):
        return sample_prior(space, rng)
    good, bad = split_trials(ok, gamma)
    score = np.zeros(n_candidates)
    columns = {}
    for spec in space:
        lx = ParzenEstimator(spec, [t.params[spec.name] for t in good])
        gx = ParzenEstimator(spec, [t.params[spec.name] for t in bad])
        cand = lx.sample(rng, n_candidates)
        columns[spec.name] = cand
        score += lx.logpdf(cand) - gx.logpdf(cand)
    if not np.isfinite(score).all():
        log.warning("degenerate Parzen densities; falling back to the prior")
        return sample_prior(space, rng)
    best = int(np.argmax(score))
    return {name: col[best] for name, col in columns.items()}


def optimize(objective: Callable[[dict], Any], space: Sequence[ParamSpec] | None = None,
             n_iter: int = 200, seed: int = 0, settings: TpeSettings = TpeSettings(),
             random_search: bool = False, callback: Callable[[Trial], None] | None = None
             ) -> TrialHistory:
    """Minimise ``objective`` over ``space``.

    ``objective`` returns a loss, or a ``(loss, report)`` pair. An exception or a
    non-finite loss marks the trial failed; failed trials never shape the
    densities. ``random_search=True`` samples every trial from the prior.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    space = tuple(space or default_search_space())
    validate_space(space)
    rng = np.random.default_rng(seed)
    history = TrialHistory(space)
    for it in range(n_iter):
        if random_search:
            params = sample_prior(space, rng)
        else:
            params = suggest(history.trials, space, rng, settings.n_candidates,
                             settings.gamma, settings.n_startup)
        trial = Trial(it, params)
        try:
            out = objective(params)
            loss, report = out if isinstance(out, tuple) else (out, None)
            loss = float(loss)
            trial.report = report
            if not math.isfinite(loss):
                raise ValueError(f"non-finite loss {loss}")
            trial.loss = loss
        except Exception as exc:  # a bad configuration should not end the search
            log.warning("trial %d failed: %s", it, exc)
            trial.status = "failed"
        history.trials.append(trial)
        log.info("trial %d loss=%.6g best=%.6g", it, trial.loss, history.best_so_far()[-1])
        if callback is not None:
            callback(trial)
    if not history.ok_trials():
        raise OptimizationError(f"all {n_iter} trials failed")
    return history
