import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from autogbm.data import SIGNALS, Window
from autogbm.features import (FEATURE_NAMES, ExtractionError, aggregate, aggregate_checked,
                              extract_features, extract_table, read_features_csv,
                              write_features_csv)

from .oracles import feature_oracle

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def window_of(signals, label=0, task="none"):
    return Window("D01", "b", 0, {s: np.asarray(v, float) for s, v in signals.items()}, label, task)


def random_window(rng, n=20):
    sig = {s: rng.normal(size=n) for s in SIGNALS}
    sig["ld_left"] = 1.8 + 0.3 * rng.normal(size=n)
    sig["ld_right"] = 1.9 + 0.3 * rng.normal(size=n)
    return window_of(sig)


def test_hand_values():
    assert aggregate([2, 4, 6], "sd") == 2.0
    assert aggregate([2, 4, 6], "cv") == 0.5
    assert aggregate([1, 2, 3, 4, 5], "qcv") == pytest.approx(1 / 3, abs=1e-12)
    assert aggregate([1, 5, 2], "range") == 4.0
    assert aggregate([1, 2, 6], "mean") == 3.0


@pytest.mark.parametrize("c", [0.0, -2.5, 7.0])
def test_constant_series(c):
    x = [c] * 6
    assert aggregate(x, "mean") == c
    for m in ("sd", "range", "cv", "qcv"):
        assert aggregate(x, m) == 0.0


def test_degenerate_flags():
    assert aggregate_checked([-1.0, 1.0], "cv").degenerate
    assert aggregate_checked([-1.0, -1.0, 1.0, 1.0], "qcv").degenerate
    assert not aggregate_checked([1.0, 2.0], "cv").degenerate


@pytest.mark.parametrize("metric,series", [("mean", []), ("sd", [1.0]), ("qcv", [1.0])])
def test_too_short(metric, series):
    with pytest.raises(ValueError):
        aggregate(series, metric)


def test_feature_names():
    assert len(FEATURE_NAMES) == 19
    assert FEATURE_NAMES[:7] == ("LV_M", "LA_M", "YV_M", "YA_M", "LD_M", "LDL_M", "LDR_M")
    assert set(FEATURE_NAMES[14:]) == {"LD_R", "LDL_Cv", "LDR_Cv", "LDL_Qcv", "LDR_Qcv"}


def test_constant_window():
    consts = {s: 0.5 + i for i, s in enumerate(SIGNALS)}
    fv = extract_features(window_of({s: [c] * 20 for s, c in consts.items()}))
    for s, prefix in zip(SIGNALS, ("LV", "LA", "YV", "YA", "LD", "LDL", "LDR")):
        assert fv.values[f"{prefix}_M"] == consts[s]
    dispersion = [n for n in FEATURE_NAMES if not n.endswith("_M")]
    assert len(dispersion) == 12
    assert all(fv.values[n] == 0.0 for n in dispersion)


def test_toy_left_departure():
    sig = {s: [0.0, 1.0, 0.0, 1.0, 0.0] for s in SIGNALS}
    sig["ld_left"] = [1, 2, 3, 4, 5]
    fv = extract_features(window_of(sig))
    assert fv.values["LDL_Qcv"] == pytest.approx(0.33333, abs=1e-5)
    assert fv.values["LDL_Cv"] == pytest.approx(0.52705, abs=1e-5)


@pytest.mark.parametrize("n", [2, 7, 20, 40])
def test_count_independent_of_length(n):
    fv = extract_features(random_window(np.random.default_rng(n), n))
    assert len(fv.values) == 19


def test_non_finite_input():
    sig = {s: np.zeros(20) for s in SIGNALS}
    sig["yaw_vel"][7] = np.nan
    with pytest.raises(ExtractionError, match="yaw_vel at sample 7"):
        extract_features(window_of(sig))


def test_metadata_copied():
    w = random_window(np.random.default_rng(1))
    w.label, w.task, w.index = 1, "long_msg", 42
    fv = extract_features(w)
    assert (fv.label, fv.task, fv.window_idx, fv.driver_id) == (1, "long_msg", 42, "D01")


def test_matches_oracle_randomised():
    rng = np.random.default_rng(0)
    for _ in range(25):
        w = random_window(rng, int(rng.integers(4, 41)))
        got = extract_features(w).values
        want = feature_oracle({s: list(map(float, w.signals[s])) for s in SIGNALS})
        for name in FEATURE_NAMES:
            assert math.isclose(got[name], want[name], rel_tol=1e-9, abs_tol=1e-9), name


@settings(max_examples=60)
@given(st.lists(finite, min_size=2, max_size=40), finite)
def test_translation(xs, c):
    x = np.array(xs)
    assert aggregate(x + c, "mean") == pytest.approx(aggregate(x, "mean") + c, abs=1e-9)
    assert aggregate(x + c, "sd") == pytest.approx(aggregate(x, "sd"), abs=1e-7)
    assert aggregate(x + c, "range") == pytest.approx(aggregate(x, "range"), abs=1e-9)


@settings(max_examples=60)
@given(st.lists(st.floats(0.01, 1e3), min_size=2, max_size=40), st.floats(0.01, 100))
def test_scale(xs, k):
    x = np.array(xs)
    for m in ("cv", "qcv"):
        assert aggregate(k * x, m) == pytest.approx(aggregate(x, m), rel=1e-9, abs=1e-12)
    for m in ("sd", "range", "mean"):
        assert aggregate(k * x, m) == pytest.approx(k * aggregate(x, m), rel=1e-9, abs=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    w = random_window(rng)
    perm = rng.permutation(20)
    shuffled = window_of({s: v[perm] for s, v in w.signals.items()})
    a, b = extract_features(w).values, extract_features(shuffled).values
    for n in FEATURE_NAMES:
        assert a[n] == pytest.approx(b[n], rel=1e-12, abs=1e-12)


def test_dispersion_non_negative():
    rng = np.random.default_rng(3)
    for _ in range(20):
        fv = extract_features(random_window(rng))
        assert all(fv.values[n] >= 0 for n in FEATURE_NAMES if n.endswith("_SD"))
        assert fv.values["LD_R"] >= 0
        assert all(math.isfinite(v) for v in fv.values.values())


def test_features_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    wins = [random_window(rng) for _ in range(6)]
    for i, w in enumerate(wins):
        w.index, w.label = i, i % 2
        w.task = "call" if w.label else "none"
    table = extract_table(wins)
    p = tmp_path / "features.csv"
    write_features_csv(table, p)
    header = p.read_text().splitlines()[0].split(",")
    assert header[:19] == list(FEATURE_NAMES)
    assert {"driver_id", "task", "window_idx", "label"} <= set(header)
    back = read_features_csv(p)
    assert np.array_equal(back.X, table.X)
    assert np.array_equal(back.y, table.y)
    assert back.names == table.names
