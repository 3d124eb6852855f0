import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccr_mpc.optimize import (
    BoxBounds,
    EnsembleState,
    ObjectiveQ,
    OptimizationError,
    ies_run,
    ies_update,
    nelder_mead,
    objective_q,
    write_trace,
)

# 2-D linear-Gaussian oracle
A = np.array([[1.0, 0.5], [0.2, 1.0], [1.0, -1.0]])
M0 = np.array([0.5, -0.3])
C0 = np.array([1.0, 2.0])
CD = np.array([0.5, 0.5, 0.5])
Y_OBS = np.array([1.0, 0.4, 0.2])


def _posterior_mean():
    Cm = np.diag(C0)
    return M0 + Cm @ A.T @ np.linalg.solve(A @ Cm @ A.T + np.diag(CD), Y_OBS - A @ M0)


def _linear_run(n_ens, seed):
    setup = ObjectiveQ(M0, C0, Y_OBS, CD, lambda t: A @ t)
    return ies_run(setup, n_ens, iterations=1, seed=seed, forward_batch=lambda T: T @ A.T)


# -- Nelder-Mead ------------------------------------------------------------


def test_parabola():
    r = nelder_mead(lambda x: (x[0] - 3) ** 2, [0.0])
    assert abs(r.x[0] - 3) < 1e-6
    assert r.converged


def test_rosenbrock():
    rosen = lambda x: 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
    r = nelder_mead(rosen, [-1.2, 1.0], max_iter=2000)
    np.testing.assert_allclose(r.x, [1, 1], atol=1e-3)
    assert r.nit <= 2000


def test_bounded_sphere_matches_grid():
    f = lambda x: float(np.sum(x**2))
    r = nelder_mead(f, [1.7, 1.9], BoxBounds([1, 1], [2, 2]))
    g = np.linspace(1, 2, 201)
    G = np.array([[a, b] for a in g for b in g])
    grid_best = G[np.argmin(np.sum(G**2, axis=1))]
    np.testing.assert_allclose(r.x, grid_best, atol=1e-4)
    np.testing.assert_allclose(r.x, [1, 1], atol=1e-4)


def test_best_value_trace_non_increasing():
    rng = np.random.default_rng(0)
    for _ in range(10):
        c = rng.standard_normal(3)
        f = lambda x: float(np.sum((x - c) ** 2) + np.sin(5 * x[0]))
        r = nelder_mead(f, rng.standard_normal(3), max_iter=300)
        assert np.all(np.diff(r.trace) <= 0)


def test_non_finite_start_is_error():
    with pytest.raises(OptimizationError):
        nelder_mead(lambda x: np.nan, [0.0])


def test_non_finite_during_search_is_penalised():
    f = lambda x: np.inf if x[0] < 0 else (x[0] - 1) ** 2
    r = nelder_mead(f, [0.5])
    assert abs(r.x[0] - 1) < 1e-5


def test_result_unpacks():
    x, fx = nelder_mead(lambda x: (x[0] + 1) ** 2, [2.0])
    assert abs(x[0] + 1) < 1e-6 and fx < 1e-10


def test_bounds_validation():
    with pytest.raises(ValueError):
        BoxBounds([0, 1], [1, 1])
    b = BoxBounds([0, -1], [2, 1])
    assert b.contains([1, 0]) and not b.contains([3, 0])
    np.testing.assert_array_equal(b.clip([5, -5]), [2, -1])


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_minimum_of_shifted_quadratic(a, b):
    r = nelder_mead(lambda x: (x[0] - a) ** 2 + 2 * (x[1] - b) ** 2, [0.0, 0.0])
    np.testing.assert_allclose(r.x, [a, b], atol=1e-5)


# -- ensemble update --------------------------------------------------------


def test_scalar_kalman_update():
    rng = np.random.default_rng(0)
    theta = rng.standard_normal((10_000, 1))
    ens = ies_update(EnsembleState(theta, [1.0]), theta.copy(), [2.0], rng)
    assert abs(ens.mean[0] - 1.0) < 0.05


def test_huge_noise_gives_no_update():
    rng = np.random.default_rng(1)
    theta = rng.standard_normal((200, 2))
    Y = theta @ A.T
    ens = ies_update(EnsembleState(theta, np.full(3, 1e12)), Y, Y.mean(axis=0), perturb=False)
    assert np.max(np.abs(ens.members - theta)) < 1e-9


def test_identical_members_unchanged():
    theta = np.tile([0.3, -1.2], (20, 1))
    ens = ies_update(EnsembleState(theta, [0.1]), np.full((20, 1), 7.0), [2.0], np.random.default_rng(2))
    np.testing.assert_array_equal(ens.members, theta)


def test_update_clamps_to_bounds():
    rng = np.random.default_rng(3)
    theta = rng.standard_normal((50, 1))
    ens = ies_update(EnsembleState(theta, [0.01]), theta, [10.0], rng, bounds=BoxBounds([-1], [1]))
    assert np.all(np.abs(ens.members) <= 1)


def test_state_validation():
    with pytest.raises(ValueError):
        EnsembleState(np.zeros((1, 2)), [1.0])
    with pytest.raises(ValueError):
        EnsembleState(np.zeros((3, 2)), [0.0])


def test_linear_gaussian_posterior_mean():
    res = _linear_run(1000, 0)
    assert np.max(np.abs(res.mean - _posterior_mean())) < 0.05


def test_error_shrinks_with_ensemble_size():
    post = _posterior_mean()
    errs = [np.mean([np.linalg.norm(_linear_run(n, s).mean - post) for s in range(5)]) for n in (100, 1000, 10_000)]
    assert errs[0] > errs[1] > errs[2]


def test_consistent_prior_barely_moves():
    setup = ObjectiveQ([1.0, 2.0], [1e-8, 1e-8], [3.0], [1.0], lambda t: np.array([t[0] + t[1]]))
    res = ies_run(setup, 100, 1, seed=4)
    assert np.max(np.abs(res.mean - [1.0, 2.0])) < 1e-3


def test_q_trace_non_increasing_on_quadratic_benchmark():
    truth = np.array([1.5, -0.8])

    def f(t):
        t = np.atleast_2d(t)
        return np.column_stack([t[:, 0] + 0.1 * t[:, 0] ** 2, t[:, 1] + 0.1 * t[:, 1] ** 2 + 0.1 * t[:, 0] * t[:, 1]])

    setup = ObjectiveQ([0.0, 0.0], [4.0, 4.0], f(truth)[0], [0.01, 0.01], lambda t: f(t)[0])
    res = ies_run(setup, 500, 3, seed=0, forward_batch=f)
    q = [row[0] for row in res.q_trace]
    assert len(q) == 4
    assert all(b <= a for a, b in zip(q, q[1:]))
    np.testing.assert_allclose(q, [215.30, 7.63, 0.366, 0.361], rtol=5e-3)


def test_failed_members_are_resampled(caplog):
    def fwd(T):
        T = np.atleast_2d(T)
        out = T @ A.T
        out[T[:, 0] > 2.0] = np.nan
        return out

    setup = ObjectiveQ(M0, C0, Y_OBS, CD, lambda t: A @ t)
    with caplog.at_level("WARNING"):
        res = ies_run(setup, 200, 1, seed=5, forward_batch=fwd)
    assert res.resampled > 0
    assert "resampled" in caplog.text


def test_iterations_must_be_positive():
    with pytest.raises(ValueError):
        ies_run(ObjectiveQ([0.0], [1.0], [0.0], [1.0], lambda t: t), iterations=0)


# -- objective --------------------------------------------------------------


def test_objective_zero_at_consistent_point():
    setup = ObjectiveQ([1.0], [1.0], [2.0], [1.0], lambda t: 2 * t)
    assert objective_q(setup, [1.0]) == (0.0, 0.0, 0.0)


def test_objective_hand_values():
    setup = ObjectiveQ([0.0], [1.0], [2.0], [1.0], lambda t: t)
    assert objective_q(setup, [2.0]) == (2.0, 2.0, 0.0)
    doubled = ObjectiveQ([0.0], [2.0], [2.0], [1.0], lambda t: t)
    assert objective_q(doubled, [2.0])[1] == 1.0


def test_objective_non_finite_forward():
    setup = ObjectiveQ([0.0], [1.0], [2.0], [1.0], lambda t: np.array([np.inf]))
    with pytest.raises(OptimizationError):
        objective_q(setup, [0.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=2), st.lists(st.floats(0.1, 5), min_size=2, max_size=2))
def test_objective_non_negative(theta, cov):
    setup = ObjectiveQ([0.5, -0.5], cov, Y_OBS, CD, lambda t: A @ t)
    q, qm, qd = objective_q(setup, theta)
    assert q >= 0 and qm >= 0 and qd >= 0
    assert q == pytest.approx(qm + qd)


def test_write_trace(tmp_path):
    p = tmp_path / "t" / "trace.csv"
    write_trace(p, [{"iteration": 0, "best": 1.5}, {"iteration": 1, "best": 0.5}])
    assert p.read_text().splitlines() == ["iteration,best", "0,1.5", "1,0.5"]
