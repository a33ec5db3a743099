import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from autogbm import gbdt
from autogbm.features import FeatureVector
from autogbm.gbdt import (FitError, GbdtModel, Hyperparameters, InferenceError, Tree,
                          builtin_importance, find_best_split, fit, grad_hess_logloss,
                          leaf_weight, load_model, predict_proba, save_model, split_gain)

from .oracles import brute_force_split, predict_tree


def xor_data(n=200, noise=17, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2 + noise))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float)
    return X, y


def stump(feature):
    return Tree(np.array([feature, -1, -1]), np.array([0.5, 0, 0]), np.array([1, -1, -1]),
                np.array([2, -1, -1]), np.array([0.0, -0.1, 0.1]), np.array([1.0, 0, 0]),
                np.array([4.0, 2, 2]))


@pytest.mark.parametrize("label,margin,expected", [(1, 0.0, (-0.5, 0.25)), (0, 0.0, (0.5, 0.25))])
def test_grad_hess_at_zero(label, margin, expected):
    assert grad_hess_logloss(label, margin) == expected


def test_grad_vanishes_when_confident():
    g, h = grad_hess_logloss(1, 40.0)
    assert abs(g) < 1e-15 and h >= 0


@pytest.mark.parametrize("G,H,alpha,lam,w", [(2, 3, 0, 1, -0.5), (2, 3, 0.5, 1, -0.375),
                                             (0.4, 3, 0.5, 1, 0.0), (-2, 3, 0.5, 1, 0.375)])
def test_leaf_weight(G, H, alpha, lam, w):
    assert leaf_weight(G, H, alpha, lam) == w


def test_leaf_weight_rejects_nonpositive_denominator():
    with pytest.raises(ArithmeticError):
        leaf_weight(1.0, 0.0, 0.0, 0.0)


@given(st.floats(-50, 50), st.floats(0, 50), st.floats(0, 2), st.floats(0.01, 5), st.floats(0, 5))
def test_leaf_weight_shrinks_with_lambda(G, H, alpha, lam, extra):
    assert abs(leaf_weight(G, H, alpha, lam + extra)) <= abs(leaf_weight(G, H, alpha, lam)) + 1e-15


def test_mirror_halves_have_no_split():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    g = np.array([0.5, -0.5, 0.5, -0.5])
    assert find_best_split(X, g, np.full(4, 0.25), Hyperparameters(min_child_weight=0)) is None


def test_gamma_above_best_gain_blocks_split():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    g = np.array([-0.5, -0.5, 0.5, 0.5])
    h = np.full(4, 0.25)
    hp = Hyperparameters(min_child_weight=0)
    best = find_best_split(X, g, h, hp)
    assert best is not None and best.feature == 0 and best.threshold == 1.5
    assert best.gain == pytest.approx(split_gain(-1, 0.5, 1, 0.5, 0, 1, 0))
    assert find_best_split(X, g, h, hp.replace(split_gamma=best.gain + 1e-9)) is None


def test_min_child_weight_blocks_split():
    X = np.array([[0.0], [1.0]])
    assert find_best_split(X, [-0.5, 0.5], [0.25, 0.25], Hyperparameters(min_child_weight=1)) is None


def test_non_finite_feature_rejected():
    with pytest.raises(ArithmeticError):
        find_best_split(np.array([[0.0], [np.inf]]), [1, 1], [1, 1], Hyperparameters())


def test_split_matches_brute_force_on_small_sets():
    rng = np.random.default_rng(11)
    for _ in range(150):
        n, d = int(rng.integers(2, 9)), int(rng.integers(1, 4))
        X = rng.integers(0, 4, size=(n, d)).astype(float)
        g = rng.normal(size=n)
        h = rng.uniform(0.05, 0.25, size=n)
        alpha, lam, gamma = rng.choice([0, 0.3]), rng.choice([0.4, 1.0]), rng.choice([0, 0.05])
        mcw = rng.choice([0, 0.2])
        hp = Hyperparameters(l1_alpha=alpha, l2_lambda=lam, split_gamma=gamma, min_child_weight=mcw)
        got = find_best_split(X, g, h, hp)
        want = brute_force_split(X.tolist(), g.tolist(), h.tolist(), alpha, lam, gamma, mcw)
        if want is None:
            assert got is None
        else:
            assert (got.feature, got.threshold) == want[:2]
            assert got.gain == pytest.approx(want[2], rel=1e-9, abs=1e-12)


def test_ties_prefer_lowest_feature_then_threshold():
    # both columns separate identically; the first must win
    X = np.array([[0.0, 5.0], [1.0, 6.0], [2.0, 7.0], [3.0, 8.0]])
    g = np.array([-1.0, -1.0, 1.0, 1.0])
    best = find_best_split(X, g, np.ones(4), Hyperparameters(min_child_weight=0))
    assert best.feature == 0


def test_separable_fit():
    X = np.linspace(-1, 1, 40).reshape(-1, 1)
    y = (X[:, 0] > 0.1).astype(float)
    m = fit(X, y, Hyperparameters(n_estimators=10, max_depth=2))
    assert np.mean((predict_proba(m, X) >= 0.5) == y) == 1.0
    assert m.base_score == pytest.approx(math.log(y.mean() / (1 - y.mean())))


def test_xor_fit():
    X, y = xor_data()
    m = fit(X, y, Hyperparameters(n_estimators=50, max_depth=3, learning_rate=0.2))
    assert np.mean((predict_proba(m, X) >= 0.5) == y) >= 0.95


def test_fit_deterministic():
    X, y = xor_data(seed=2)
    hp = Hyperparameters(n_estimators=20, max_depth=4, subsample=0.7, colsample_bytree=0.6,
                         colsample_bylevel=0.8)
    a, b = fit(X, y, hp, seed=5), fit(X, y, hp, seed=5)
    for ta, tb in zip(a.trees, b.trees):
        assert np.array_equal(ta.feature, tb.feature)
        assert np.array_equal(ta.threshold, tb.threshold)
        assert np.array_equal(ta.value, tb.value)
    assert np.array_equal(predict_proba(a, X), predict_proba(b, X))


def test_single_class_rejected():
    with pytest.raises(FitError):
        fit(np.zeros((5, 2)), np.ones(5), Hyperparameters())


def test_empty_valid_rejected():
    X, y = xor_data(20)
    with pytest.raises(ValueError):
        fit(X, y, Hyperparameters(), X_valid=np.zeros((0, X.shape[1])), y_valid=np.zeros(0))


def test_structure_invariants():
    X, y = xor_data(300, seed=4)
    hp = Hyperparameters(n_estimators=30, max_depth=4, min_child_weight=0.8, subsample=0.8)
    m = fit(X[:200], y[:200], hp, seed=1, X_valid=X[200:], y_valid=y[200:])
    assert m.best_iteration <= len(m.trees) <= hp.n_estimators
    assert m.best_iteration == int(np.argmin(m.valid_loss)) + 1
    for t in m.trees:
        assert t.depth() <= hp.max_depth
        leaves = t.left < 0
        assert (t.cover[leaves] >= hp.min_child_weight - 1e-12).all()
        assert (t.gain[~leaves] > 0).all()


def test_early_stopping_patience():
    X, y = xor_data(300, noise=30, seed=8)
    hp = Hyperparameters(n_estimators=150, max_depth=6, learning_rate=0.3)
    m = fit(X[:150], y[:150], hp, X_valid=X[150:], y_valid=y[150:])
    if len(m.trees) < hp.n_estimators:
        assert len(m.trees) - m.best_iteration == math.ceil(0.1 * hp.n_estimators)


def test_gamma_reduces_split_count():
    X, y = xor_data(seed=3)
    counts = []
    for gamma in (0.0, 0.5, 1.0):
        m = fit(X, y, Hyperparameters(n_estimators=10, max_depth=4, split_gamma=gamma))
        counts.append(sum(len(t.splits()) for t in m.trees))
    assert counts[0] >= counts[1] >= counts[2]


def test_prediction_matches_tree_walk():
    X, y = xor_data(seed=6)
    m = fit(X, y, Hyperparameters(n_estimators=15, max_depth=3))
    for row, p in zip(X[:40], predict_proba(m, X[:40])):
        margin = m.base_score + sum(predict_tree(t, row) for t in m.trees)
        assert p == pytest.approx(1 / (1 + math.exp(-margin)), rel=1e-12)


def test_empty_forest_returns_prior():
    m = GbdtModel([], math.log(0.3 / 0.7), 0.1, 0, ("a", "b"))
    assert predict_proba(m, np.zeros((3, 2))) == pytest.approx([0.3] * 3)
    assert predict_proba(GbdtModel([], 0.0, 0.1, 0, ("a",)), np.zeros((1, 1)))[0] == 0.5


def test_feature_vector_input():
    m = GbdtModel([stump(0)], 0.0, 0.1, 1, ("a", "b"))
    fv = FeatureVector({"a": 1.0, "b": 0.0}, 0, "none", "D01", 0)
    assert predict_proba(m, fv) == pytest.approx(1 / (1 + math.exp(-0.1)))
    with pytest.raises(InferenceError):
        predict_proba(m, FeatureVector({"a": 1.0}, 0, "none", "D01", 0))


def test_builtin_importance():
    names = tuple("abcde")
    one = GbdtModel([stump(3)], 0.0, 0.1, 1, names)
    assert builtin_importance(one, "weight")["d"] == 1.0
    forest = GbdtModel([stump(0), stump(0), stump(0), stump(1)], 0.0, 0.1, 4, names)
    w = builtin_importance(forest, "weight")
    assert (w["a"], w["b"]) == (0.75, 0.25)
    assert sum(builtin_importance(forest, "gain").values()) == pytest.approx(1.0)
    empty = GbdtModel([], 0.0, 0.1, 0, names)
    assert set(builtin_importance(empty, "gain").values()) == {0.0}


def test_serialization_roundtrip(tmp_path):
    X, y = xor_data(seed=9)
    m = fit(X, y, Hyperparameters(n_estimators=12, max_depth=3, subsample=0.8), seed=3)
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.hyperparameters == m.hyperparameters
    assert back.best_iteration == m.best_iteration
    assert np.array_equal(predict_proba(back, X), predict_proba(m, X))
    save_model(back, tmp_path / "m2.json")
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()


@pytest.mark.parametrize("bad", [dict(subsample=0.0), dict(colsample_bytree=1.5),
                                 dict(learning_rate=0), dict(max_depth=0), dict(l2_lambda=-1)])
def test_hyperparameter_validation(bad):
    with pytest.raises(ValueError):
        Hyperparameters(**bad)


def test_close_to_sklearn_boosting():
    sk = pytest.importorskip("sklearn.ensemble")
    X, y = xor_data(400, noise=3, seed=12)
    ours = fit(X[:300], y[:300], Hyperparameters(n_estimators=60, max_depth=3, learning_rate=0.2))
    ref = sk.GradientBoostingClassifier(n_estimators=60, max_depth=3, learning_rate=0.2,
                                        random_state=0).fit(X[:300], y[:300])
    acc_ours = np.mean((predict_proba(ours, X[300:]) >= 0.5) == y[300:])
    acc_ref = ref.score(X[300:], y[300:])
    assert acc_ours >= acc_ref - 0.05


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_probabilities_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    y = (rng.random(30) < 0.4).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    p = predict_proba(fit(X, y, Hyperparameters(n_estimators=5, max_depth=3)), X)
    assert ((p > 0) & (p < 1)).all()


def test_tie_tolerance_constant():
    assert gbdt.TIE_RTOL == 1e-12
