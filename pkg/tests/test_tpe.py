import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from autogbm.tpe import (OptimizationError, ParamSpec, ParzenEstimator, Trial, TrialHistory,
                         default_search_space, optimize, read_trials_csv, sample_prior,
                         split_trials, suggest, validate_space, write_trials_csv)

SPACE = default_search_space()
X1 = (ParamSpec("x", "uniform_real", 0.0, 10.0),)


def trials_from(losses, xs=None):
    xs = xs if xs is not None else [0.0] * len(losses)
    return [Trial(i, {"x": x}, loss) for i, (x, loss) in enumerate(zip(xs, losses))]


def test_default_space_matches_configuration_table():
    by = {p.name: p for p in SPACE}
    assert [p.name for p in SPACE] == ["n_estimators", "learning_rate", "colsample_bylevel",
                                       "colsample_bytree", "subsample", "max_depth",
                                       "min_child_weight", "l1_alpha", "split_gamma", "l2_lambda"]
    assert (by["n_estimators"].low, by["n_estimators"].high) == (30, 150)
    assert by["learning_rate"].kind == "log_uniform_real"
    assert (by["learning_rate"].low, by["learning_rate"].high) == (0.05, 0.3)
    assert by["max_depth"].choices == (3, 4, 5, 6)
    assert (by["l2_lambda"].low, by["min_child_weight"].low) == (0.4, 0.6)


def test_prior_samples_in_bounds():
    rng = np.random.default_rng(0)
    draws = [sample_prior(SPACE, rng) for _ in range(2000)]
    assert all(0.05 <= d["learning_rate"] <= 0.3 for d in draws)
    assert {d["max_depth"] for d in draws} == {3, 4, 5, 6}
    assert all(isinstance(d["n_estimators"], int) and 30 <= d["n_estimators"] <= 150 for d in draws)


def test_prior_uniform_mean():
    rng = np.random.default_rng(1)
    sub = [sample_prior(SPACE, rng)["subsample"] for _ in range(10_000)]
    assert abs(np.mean(sub) - 0.8) < 0.01


def test_log_uniform_is_uniform_in_log_space():
    rng = np.random.default_rng(2)
    lr = np.log([sample_prior(SPACE, rng)["learning_rate"] for _ in range(10_000)])
    assert abs(lr.mean() - (math.log(0.05) + math.log(0.3)) / 2) < 0.02


@pytest.mark.parametrize("n,expected_good", [(20, 5), (1, 1), (4, 1), (9, 2)])
def test_split_sizes(n, expected_good):
    good, bad = split_trials(trials_from(list(range(n))[::-1]), 0.25)
    assert len(good) == expected_good and len(bad) == n - expected_good
    assert max(t.loss for t in good) <= min((t.loss for t in bad), default=math.inf)


def test_split_ignores_failed_and_needs_one_ok():
    ts = trials_from([3.0, 1.0, 2.0, 0.5])
    ts[3].status = "failed"
    good, bad = split_trials(ts, 0.25)
    assert [t.loss for t in good] == [1.0] and len(bad) == 2
    with pytest.raises(OptimizationError):
        split_trials([Trial(0, {}, math.nan, "failed")])


def test_empty_parzen_is_prior():
    est = ParzenEstimator(X1[0], [])
    assert np.allclose(est.pdf([0.0, 3.3, 10.0]), 0.1)


def test_categorical_smoothing():
    spec = ParamSpec("c", "categorical", choices=("A", "B"))
    est = ParzenEstimator(spec, ["A"] * 6)
    assert est.pdf(["A"])[0] == pytest.approx(7 / 8)


def test_out_of_bounds_observation():
    with pytest.raises(ValueError):
        ParzenEstimator(X1[0], [11.0])


@pytest.mark.parametrize("spec,obs", [
    (ParamSpec("u", "uniform_real", -5, 5), [-4.9, 0.0, 0.1, 3.0]),
    (ParamSpec("l", "log_uniform_real", 0.05, 0.3), [0.06, 0.1, 0.29]),
])
def test_density_integrates_to_one(spec, obs):
    est = ParzenEstimator(spec, obs)
    lo, hi = spec.internal_bounds()
    # the density is defined over the internal coordinate (log space for log-uniform)
    to_value = math.exp if spec.kind == "log_uniform_real" else float
    total, _ = integrate.quad(lambda z: est.pdf([to_value(z)])[0], lo, hi, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_integer_masses_sum_to_one():
    spec = ParamSpec("n", "uniform_int", 30, 150)
    est = ParzenEstimator(spec, [30, 31, 90, 150])
    assert est.pdf(list(range(30, 151))).sum() == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=50)
@given(st.lists(st.floats(0, 10), max_size=12), st.floats(0, 10))
def test_density_positive_in_bounds(obs, x):
    assert ParzenEstimator(X1[0], obs).pdf([x])[0] > 0


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_suggestions_always_in_bounds(seed):
    rng = np.random.default_rng(seed)
    hist = [Trial(i, sample_prior(SPACE, rng), float(rng.random())) for i in range(25)]
    params = suggest(hist, SPACE, rng)
    assert all(p.contains(params[p.name]) for p in SPACE)


def test_startup_phase_matches_prior_stream():
    hist = [Trial(i, {"x": 1.0}, 0.0) for i in range(5)]
    a = suggest(hist, X1, np.random.default_rng(4))
    b = sample_prior(X1, np.random.default_rng(4))
    assert a == b


def test_concentration_near_optimum():
    hist = optimize(lambda p: (p["x"] - 2) ** 2, X1, n_iter=50, seed=0)
    rng = np.random.default_rng(100)
    xs = [suggest(hist.trials, X1, rng)["x"] for _ in range(50)]
    assert np.mean([1 <= x <= 3 for x in xs]) >= 0.7


def test_single_iteration():
    h = optimize(lambda p: 1.0, X1, n_iter=1, seed=0)
    assert len(h) == 1 and h.best is h.trials[0]


def test_constant_objective_flat_best_so_far():
    h = optimize(lambda p: 2.5, X1, n_iter=25, seed=0)
    assert h.best.loss == 2.5
    assert h.best_so_far() == [2.5] * 25


def test_failures_recorded_and_excluded():
    def obj(p):
        if p["x"] > 5:
            raise RuntimeError("boom")
        return p["x"]

    h = optimize(obj, X1, n_iter=40, seed=1)
    failed = [t for t in h.trials if not t.ok]
    assert failed and all(t.params["x"] > 5 for t in failed)
    assert h.best.loss <= 5


def test_all_failed_raises():
    with pytest.raises(OptimizationError):
        optimize(lambda p: math.nan, X1, n_iter=3)


def test_reproducible_and_best_so_far_monotone():
    f = lambda p: (p["x"] - 7.3) ** 2  # noqa: E731
    a, b = optimize(f, X1, 40, seed=9), optimize(f, X1, 40, seed=9)
    assert [t.params for t in a.trials] == [t.params for t in b.trials]
    bsf = a.best_so_far()
    assert all(x >= y for x, y in zip(bsf, bsf[1:]))


def test_sphere_beats_random_small():
    space = (ParamSpec("x1", "uniform_real", -5, 5), ParamSpec("x2", "uniform_real", -5, 5))
    f = lambda p: p["x1"] ** 2 + p["x2"] ** 2  # noqa: E731
    tpe = [optimize(f, space, 60, seed=s).best.loss for s in range(6)]
    rnd = [optimize(f, space, 60, seed=s, random_search=True).best.loss for s in range(6)]
    assert np.median(tpe) < np.median(rnd)


def test_trials_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    h = TrialHistory(SPACE, [Trial(i, sample_prior(SPACE, rng), float(rng.random()))
                             for i in range(6)])
    h.trials[2].status, h.trials[2].loss = "failed", math.nan
    write_trials_csv(h, tmp_path / "t.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0].split(",")
    assert header == ["iteration", "status", "loss", *(p.name for p in SPACE)]
    back = read_trials_csv(tmp_path / "t.csv")
    assert [t.params for t in back.trials] == [t.params for t in h.trials]
    assert back.trials[2].status == "failed"


@pytest.mark.parametrize("kw", [dict(kind="uniform_real", low=1, high=1),
                                dict(kind="log_uniform_real", low=0, high=1),
                                dict(kind="categorical", choices=("a", "a")),
                                dict(kind="beta", low=0, high=1)])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        ParamSpec("p", **kw)


def test_duplicate_names_rejected():
    with pytest.raises(ValueError):
        validate_space((X1[0], X1[0]))
