import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccr_mpc.lstm import (
    LstmConfig,
    LstmModel,
    LstmState,
    LstmWeights,
    loss_and_grad,
    lstm_cell_step,
    lstm_forecast,
    lstm_train,
    make_windows,
    run_window,
    sigmoid,
)
from ccr_mpc.models import DivergenceError


def _state(n_h, c=0.0):
    return LstmState(np.zeros(n_h), np.full(n_h, c))


def test_zero_weights_zero_cell():
    w = LstmWeights.zeros(1, 3, 1)
    s, y = lstm_cell_step(w, _state(3), [0.7])
    np.testing.assert_array_equal(s.c, 0.0)
    np.testing.assert_array_equal(s.h, 0.0)
    np.testing.assert_array_equal(y, 0.0)


def test_zero_weights_cell_two():
    w = LstmWeights.zeros(1, 1, 1)
    s, _ = lstm_cell_step(w, _state(1, 2.0), [5.0])
    assert s.c[0] == 1.0
    assert s.h[0] == pytest.approx(0.5 * np.tanh(1.0), abs=1e-15)
    assert s.h[0] == pytest.approx(0.38080, abs=1e-5)


def test_zero_weights_geometric_decay():
    w = LstmWeights.zeros(2, 2, 1)
    s = _state(2, 3.0)
    for k in range(1, 21):
        prev = s.c.copy()
        s, _ = lstm_cell_step(w, s, [1.0, -1.0])
        np.testing.assert_array_equal(s.c, 0.5 * prev)
    np.testing.assert_array_equal(s.c, 3.0 * 0.5**20)


def test_non_finite_input_rejected():
    with pytest.raises(FloatingPointError):
        lstm_cell_step(LstmWeights.zeros(1, 1, 1), _state(1), [np.nan])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1e3, 1e3))
def test_gates_and_outputs_in_range(seed, u):
    rng = np.random.default_rng(seed)
    w = LstmWeights.random(1, 4, 1, rng, scale=3.0)
    h = rng.uniform(-1, 1, 4)
    c = rng.uniform(-5, 5, 4)
    x = np.array([u])
    for Wu, Wh in [(w.W_uf, w.W_hf), (w.W_ui, w.W_hi), (w.W_uo, w.W_ho)]:
        gate = sigmoid(x @ Wu.T + h @ Wh.T)
        assert np.all((gate >= 0) & (gate <= 1))
    s, _ = lstm_cell_step(w, LstmState(h, c), x)
    assert np.all(np.abs(s.h) <= 1)


@pytest.mark.parametrize("seed", range(5))
def test_bptt_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    w = LstmWeights.random(1, 2, 1, rng, scale=1.0)
    U = rng.standard_normal((4, 3, 1))
    Y = rng.standard_normal((4, 1))
    _, grads = loss_and_grad(w, U, Y)
    h = 1e-5
    worst = 0.0
    for k, a in enumerate(w.arrays()):
        for idx in np.ndindex(a.shape):
            plus = [b.copy() for b in w.arrays()]
            minus = [b.copy() for b in w.arrays()]
            plus[k][idx] += h
            minus[k][idx] -= h
            fd = (loss_and_grad(LstmWeights(*plus), U, Y)[0] - loss_and_grad(LstmWeights(*minus), U, Y)[0]) / (2 * h)
            worst = max(worst, abs(fd - grads[k][idx]) / max(1.0, abs(fd)))
    assert worst < 1e-4


def test_constant_series():
    m = lstm_train(np.full(60, 4.2), lookback=7, config=LstmConfig(epochs=50))
    assert m.loss_trace[-1] < 1e-12
    np.testing.assert_allclose(lstm_forecast(m, np.full(7, 4.2), 10), 4.2, atol=1e-2)


def test_sine_one_step_mse():
    t = np.arange(200)
    s = np.sin(2 * np.pi * t / 25)
    m = lstm_train(s, lookback=7, config=LstmConfig(hidden=8, epochs=500, seed=0, learning_rate=1.0))
    U, Y = make_windows(s, 7)
    pred = np.array([lstm_forecast(m, u, 1)[0] for u in U])
    assert np.mean((pred - Y) ** 2) < 0.01


def test_horizon_one_is_single_window_evaluation():
    rng = np.random.default_rng(4)
    w = LstmWeights.random(1, 3, 1, rng)
    m = LstmModel(w, 5, np.array([0.0]), np.array([1.0]))
    hist = rng.random(5)
    y = run_window(w, hist[None, :, None])[0, 0]
    assert lstm_forecast(m, hist, 1)[0] == y


def test_zero_weights_forecast_zero():
    m = LstmModel(LstmWeights.zeros(1, 3, 1), 4, np.array([0.0]), np.array([1.0]))
    np.testing.assert_array_equal(lstm_forecast(m, [9, 8, 7, 6], 6), 0.0)


def test_forecast_deterministic_and_recursive():
    rng = np.random.default_rng(5)
    m = LstmModel(LstmWeights.random(1, 3, 1, rng), 4, np.array([0.0]), np.array([1.0]))
    hist = rng.random(4)
    a = lstm_forecast(m, hist, 3)
    np.testing.assert_array_equal(a, lstm_forecast(m, hist, 3))
    # step 2 equals a 1-step forecast from the window extended by step 1
    assert lstm_forecast(m, np.append(hist[1:], a[0]), 1)[0] == pytest.approx(a[1], abs=1e-15)


def test_forecast_errors():
    m = LstmModel(LstmWeights.zeros(1, 1, 1), 3, np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        lstm_forecast(m, [1, 2, 3], 0)
    with pytest.raises(ValueError):
        lstm_forecast(m, [1, 2], 1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_preconditions_and_divergence():
    with pytest.raises(ValueError):
        lstm_train(np.arange(5.0), lookback=5)
    with pytest.raises(ValueError):
        lstm_train(np.arange(20.0), lookback=3, config=LstmConfig(learning_rate=0.0))
    with pytest.raises(DivergenceError, match="epoch"):
        lstm_train(np.sin(np.arange(40.0)), 3, LstmConfig(learning_rate=1e308, clip_norm=None, epochs=5))
