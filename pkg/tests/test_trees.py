import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccr_mpc.trees import (
    DegenerateLeafError,
    GbtConfig,
    GbtEnsemble,
    build_tree,
    find_best_split,
    gbt_predict,
    gbt_train,
    leaf_weight,
    rf_fit,
    rf_predict,
    split_gain,
)


def _r2(y, yhat):
    return 1 - np.sum((y - yhat) ** 2) / np.sum((y - y.mean()) ** 2)


# -- leaf weight / split gain ----------------------------------------------


def test_leaf_weight_values():
    assert leaf_weight(-4.0, 2.0, 0.0) == 2.0
    assert leaf_weight(0.0, 3.0, 5.0) == 0.0
    assert leaf_weight(-20.0, 2.0, 1.0) == pytest.approx(20 / 3, abs=1e-12)
    with pytest.raises(DegenerateLeafError):
        leaf_weight(1.0, 0.0, 0.0)


def test_split_gain_values():
    assert split_gain(-3.0, 2.0, -3.0, 2.0, 0.0, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert split_gain(0.0, 2.0, -20.0, 2.0, 1.0, 0.0) == pytest.approx(80 / 3, abs=1e-12)
    assert split_gain(0.0, 2.0, -20.0, 2.0, 1.0, 30.0) == pytest.approx(-10 / 3, abs=1e-12)


def test_leaf_weight_matches_brute_force_minimisation():
    rng = np.random.default_rng(0)
    for _ in range(20):
        G, H, lam = rng.uniform(-50, 50), rng.uniform(0.1, 20), rng.uniform(0, 5)
        f = lambda w: G * w + 0.5 * (H + lam) * w**2
        grid = np.linspace(-500, 500, 100_000)
        i = int(np.clip(np.argmin(f(grid)), 1, len(grid) - 2))
        # vertex of the parabola through the three best grid points
        x0, x1, x2 = grid[i - 1 : i + 2]
        y0, y1, y2 = f(x0), f(x1), f(x2)
        w = x1 - 0.5 * ((x1 - x0) ** 2 * (y1 - y2) - (x1 - x2) ** 2 * (y1 - y0)) / ((x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0))
        assert abs(leaf_weight(G, H, lam) - w) < 1e-10


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-100, 100), st.floats(0, 50), st.floats(-100, 100), st.floats(0, 50), st.floats(0.01, 10), st.floats(0, 10)
)
def test_split_gain_equals_score_difference(gL, hL, gR, hR, lam, gamma):
    score = lambda G, H: -0.5 * G**2 / (H + lam)
    parent = score(gL + gR, hL + hR) + gamma
    children = score(gL, hL) + score(gR, hR) + 2 * gamma
    expected = parent - children
    scale = max(1.0, abs(parent), abs(children))
    assert abs(split_gain(gL, hL, gR, hR, lam, gamma) - expected) <= 1e-12 * scale


# -- split search -----------------------------------------------------------


def _brute_split(X, g, h, lam, gamma):
    best = None
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            left = X[:, j] <= thr
            gain = split_gain(g[left].sum(), h[left].sum(), g[~left].sum(), h[~left].sum(), lam, gamma)
            if best is None or gain > best[0] + 1e-12:
                best = (gain, j, thr)
    return best


def test_greedy_split_matches_exhaustive_scan():
    rng = np.random.default_rng(1)
    for trial in range(60):
        n, d = rng.integers(4, 51), rng.integers(1, 5)
        X = np.round(rng.uniform(0, 1, (n, d)), 1 if trial % 2 else 6)
        g, h = rng.standard_normal(n), rng.uniform(0.1, 1, n)
        s = find_best_split(X, g, h, 1.0, 0.0)
        ref = _brute_split(X, g, h, 1.0, 0.0)
        if ref is None or ref[0] <= 0:
            assert s is None
            continue
        assert s.gain == pytest.approx(ref[0], abs=1e-10)
        assert (s.feature, s.threshold) == (ref[1], pytest.approx(ref[2]))


def test_split_ties_prefer_lowest_feature():
    x = np.arange(6.0)
    X = np.column_stack([x, x])
    s = find_best_split(X, np.array([1, 1, 1, -1, -1, -1.0]), np.ones(6), 1.0, 0.0)
    assert (s.feature, s.threshold) == (0, 2.5)


# -- boosting ---------------------------------------------------------------


def test_single_leaf_gives_mean():
    rng = np.random.default_rng(0)
    X, y = rng.random((30, 2)), rng.standard_normal(30)
    m = gbt_train((X, y), GbtConfig(rounds=1, max_depth=0, learning_rate=1.0, lam=0.0, base_score=0.0))
    np.testing.assert_allclose(gbt_predict(m, rng.random((5, 2))), y.mean(), atol=1e-12)


def test_boosted_stumps_fit_step():
    x = np.linspace(0, 1, 20)
    y = (x > 0.5).astype(float)
    m = gbt_train((x, y), GbtConfig(rounds=20, max_depth=1, learning_rate=1.0))
    assert _r2(y, gbt_predict(m, x)) >= 0.999


def test_xor_grid_classification():
    # an odd grid: on a perfectly balanced one every root split has zero gain
    g = np.linspace(0, 1, 5)
    X = np.array(list(itertools.product(g, g)))
    y = ((X[:, 0] > 0.5) ^ (X[:, 1] > 0.5)).astype(float)
    m = gbt_train((X, y), GbtConfig(rounds=50, max_depth=2), loss="softmax")
    labels, p = gbt_predict(m, X)
    np.testing.assert_array_equal(labels, y)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_empty_boosting_returns_base_score():
    m = GbtEnsemble("regression", (), 0.1, 1.0, 0.0, 4, np.array([3.25]), 2)
    np.testing.assert_array_equal(gbt_predict(m, np.zeros((4, 2))), 3.25)


def test_single_stump_hand_values():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([0.0, 0.0, 10.0, 10.0])
    m = gbt_train((x, y), GbtConfig(rounds=1, max_depth=1, learning_rate=1.0, lam=0.0))
    # base 5, split at 1.5, leaves -5 and +5
    np.testing.assert_allclose(gbt_predict(m, [-7.0, 1.5, 1.6, 99.0]), [0, 0, 10, 10], atol=1e-12)


def test_equal_class_scores_uniform():
    m = GbtEnsemble("classification", (), 0.1, 1.0, 0.0, 4, np.zeros(4), 1, 4)
    _, p = gbt_predict(m, np.zeros((3, 1)))
    np.testing.assert_array_equal(p, 0.25)


def test_training_mse_non_increasing():
    rng = np.random.default_rng(5)
    X = rng.uniform(-1, 1, (120, 3))
    y = np.sin(3 * X[:, 0]) + X[:, 1] * X[:, 2] + 0.1 * rng.standard_normal(120)
    m = gbt_train((X, y), GbtConfig(rounds=60, gamma=0.0))
    assert len(m.train_loss) == 61
    assert np.all(np.diff(m.train_loss) <= 1e-12)


def test_bad_labels_rejected():
    with pytest.raises(ValueError):
        gbt_train((np.arange(4.0), np.array([0, 1.5, 1, 0])), loss="softmax")


# -- random forest ----------------------------------------------------------


def test_plain_cart_interpolates_distinct_inputs():
    rng = np.random.default_rng(2)
    X, y = rng.random((40, 3)), rng.standard_normal(40)
    m = rf_fit((X, y), n_estimators=1, max_features=3, min_leaf=1, bootstrap=False)
    np.testing.assert_allclose(rf_predict(m, X), y, atol=1e-12)


def test_constant_target():
    rng = np.random.default_rng(3)
    m = rf_fit((rng.random((30, 2)), np.full(30, 4.5)), n_estimators=10)
    np.testing.assert_allclose(rf_predict(m, rng.uniform(-5, 5, (20, 2))), 4.5, atol=1e-12)


def test_forest_prediction_is_mean_of_trees():
    rng = np.random.default_rng(4)
    X, y = rng.random((60, 4)), rng.standard_normal(60)
    m = rf_fit((X, y), n_estimators=15, seed=9)
    Q = rng.random((25, 4))
    per_tree = np.column_stack([t.predict(Q)[:, 0] for t in m.trees])
    np.testing.assert_allclose(rf_predict(m, Q), per_tree.mean(axis=1), rtol=0, atol=1e-14)


def test_forest_smears_a_step():
    x = np.linspace(0, 1, 40)
    y = (x > 0.5).astype(float)
    m = rf_fit((x, y), n_estimators=100, seed=0)
    mid = rf_predict(m, 0.5)[0]
    assert 0.0 < mid < 1.0
    base = build_tree(x[:, None], -y, np.ones(40), 0.0).predict(np.array([[0.5]]))[0, 0]
    assert base in (0.0, 1.0)


def test_min_leaf_larger_than_data():
    with pytest.raises(ValueError):
        rf_fit((np.arange(5.0), np.arange(5.0)), min_leaf=6)


def test_forest_deterministic_for_seed():
    rng = np.random.default_rng(6)
    X, y = rng.random((50, 3)), rng.standard_normal(50)
    a = rf_predict(rf_fit((X, y), 20, seed=1), X)
    b = rf_predict(rf_fit((X, y), 20, seed=1), X)
    np.testing.assert_array_equal(a, b)
