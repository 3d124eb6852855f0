"""Bias-free LSTM cell with an identity read-out, trained by truncated
back-propagation through time over fixed-length lookback windows.

Each window starts from ``h = c = 0``; only the output after the last step
of the window is compared with the next value of the series.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import DivergenceError

GATES = ("f", "i", "o", "g")


def sigmoid(x):
    with np.errstate(over="ignore"):  # exp overflow correctly saturates to 0
        return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True, eq=False)
class LstmWeights:
    W_uf: np.ndarray
    W_ui: np.ndarray
    W_uo: np.ndarray
    W_ug: np.ndarray
    W_hf: np.ndarray
    W_hi: np.ndarray
    W_ho: np.ndarray
    W_hg: np.ndarray
    W_hy: np.ndarray

    def __post_init__(self):
        n_h, n_u = self.W_uf.shape
        for g in GATES:
            if getattr(self, f"W_u{g}").shape != (n_h, n_u):
                raise ValueError(f"W_u{g} must be {n_h}x{n_u}")
            if getattr(self, f"W_h{g}").shape != (n_h, n_h):
                raise ValueError(f"W_h{g} must be {n_h}x{n_h}")
        if self.W_hy.shape[1] != n_h:
            raise ValueError("W_hy must have n_h columns")
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise ValueError("non-finite LSTM weights")

    @property
    def n_h(self) -> int:
        return self.W_uf.shape[0]

    @property
    def n_u(self) -> int:
        return self.W_uf.shape[1]

    @property
    def n_y(self) -> int:
        return self.W_hy.shape[0]

    @staticmethod
    def names() -> list[str]:
        return [f"W_u{g}" for g in GATES] + [f"W_h{g}" for g in GATES] + ["W_hy"]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in self.names()]

    @classmethod
    def zeros(cls, n_u: int, n_h: int, n_y: int) -> "LstmWeights":
        return cls(*[np.zeros((n_h, n_u))] * 4, *[np.zeros((n_h, n_h))] * 4, np.zeros((n_y, n_h)))

    @classmethod
    def random(cls, n_u: int, n_h: int, n_y: int, rng: np.random.Generator, scale: float | None = None):
        a = scale if scale is not None else 1.0 / np.sqrt(n_h)
        return cls(
            *[rng.uniform(-a, a, (n_h, n_u)) for _ in GATES],
            *[rng.uniform(-a, a, (n_h, n_h)) for _ in GATES],
            rng.uniform(-a, a, (n_y, n_h)),
        )

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in self.names()}

    @classmethod
    def from_dict(cls, doc: dict) -> "LstmWeights":
        return cls(*[np.array(doc[k], dtype=float) for k in cls.names()])


@dataclass(frozen=True, eq=False)
class LstmState:
    h: np.ndarray
    c: np.ndarray


def lstm_cell_step(w: LstmWeights, state: LstmState, u_t) -> tuple[LstmState, np.ndarray]:
    """One cell update. Works on a single vector or a batch of row vectors."""
    u = np.asarray(u_t, dtype=float)
    if not np.all(np.isfinite(u)):
        raise FloatingPointError("non-finite LSTM input")
    h, c = state.h, state.c
    f = sigmoid(u @ w.W_uf.T + h @ w.W_hf.T)
    i = sigmoid(u @ w.W_ui.T + h @ w.W_hi.T)
    o = sigmoid(u @ w.W_uo.T + h @ w.W_ho.T)
    g = np.tanh(u @ w.W_ug.T + h @ w.W_hg.T)
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return LstmState(h_new, c_new), h_new @ w.W_hy.T


def run_window(w: LstmWeights, U: np.ndarray, keep: bool = False):
    """Run batched windows ``U`` (B, L, n_u) from a zero state.

    Returns the final output (B, n_y) and, with ``keep``, the per-step cache
    needed for back-propagation.
    """
    B, L, _ = U.shape
    h = np.zeros((B, w.n_h))
    c = np.zeros((B, w.n_h))
    cache = []
    for t in range(L):
        u = U[:, t, :]
        f = sigmoid(u @ w.W_uf.T + h @ w.W_hf.T)
        i = sigmoid(u @ w.W_ui.T + h @ w.W_hi.T)
        o = sigmoid(u @ w.W_uo.T + h @ w.W_ho.T)
        g = np.tanh(u @ w.W_ug.T + h @ w.W_hg.T)
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        if keep:
            cache.append((u, h, c, f, i, o, g, tc))
        h, c = h_new, c_new
    y = h @ w.W_hy.T
    return (y, h, cache) if keep else y


def loss_and_grad(w: LstmWeights, U: np.ndarray, Y: np.ndarray):
    """Half mean squared error of the window outputs and its BPTT gradient
    (list ordered as :meth:`LstmWeights.names`)."""
    B = U.shape[0]
    y, h_last, cache = run_window(w, U, keep=True)
    r = y - Y
    loss = 0.5 * np.sum(r**2) / B
    dy = r / B
    grads = {k: np.zeros_like(v) for k, v in zip(w.names(), w.arrays())}
    grads["W_hy"] = dy.T @ h_last
    dh = dy @ w.W_hy
    dc = np.zeros_like(dh)
    for u, h_prev, c_prev, f, i, o, g, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc**2)
        da = {
            "f": dc * c_prev * f * (1.0 - f),
            "i": dc * g * i * (1.0 - i),
            "o": do * o * (1.0 - o),
            "g": dc * i * (1.0 - g**2),
        }
        dh = np.zeros_like(dh)
        for k in GATES:
            grads[f"W_u{k}"] += da[k].T @ u
            grads[f"W_h{k}"] += da[k].T @ h_prev
            dh += da[k] @ getattr(w, f"W_h{k}")
        dc = dc * f
    return loss, [grads[k] for k in w.names()]


@dataclass
class LstmConfig:
    hidden: int = 8
    learning_rate: float = 0.5
    epochs: int = 500
    seed: int = 0
    clip_norm: float | None = 5.0
    scale: bool = True


@dataclass(frozen=True, eq=False)
class LstmModel:
    """Trained weights plus the lookback length and series min-max scaling."""

    weights: LstmWeights
    lookback: int
    series_min: np.ndarray
    series_max: np.ndarray
    loss_trace: tuple = field(default=(), compare=False)

    def _scale(self, a):
        span = self.series_max - self.series_min
        return np.where(span > 0, (a - self.series_min) / np.where(span > 0, span, 1.0), 0.0)

    def _unscale(self, a):
        return self.series_min + a * (self.series_max - self.series_min)

    def forecast(self, history, horizon: int) -> np.ndarray:
        return lstm_forecast(self, history, horizon)

    def to_dict(self) -> dict:
        return {
            "kind": "lstm",
            "lookback": self.lookback,
            "series_min": self.series_min.tolist(),
            "series_max": self.series_max.tolist(),
            "weights": self.weights.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LstmModel":
        return cls(
            LstmWeights.from_dict(doc["weights"]), int(doc["lookback"]),
            np.array(doc["series_min"], dtype=float), np.array(doc["series_max"], dtype=float),
        )


def make_windows(series: np.ndarray, lookback: int) -> tuple[np.ndarray, np.ndarray]:
    """Inputs ``series[t-L:t]`` and next-step targets ``series[t]``."""
    T = series.shape[0]
    idx = np.arange(lookback)[None, :] + np.arange(T - lookback)[:, None]
    return series[idx], series[lookback:]


def lstm_train(series, lookback: int = 7, config: LstmConfig | None = None) -> LstmModel:
    """Gradient descent on the one-step-ahead window loss.

    ``series`` is (T,) or (T, n_u); the model forecasts every column of the
    series one step ahead.
    """
    cfg = config or LstmConfig()
    S = np.asarray(series, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[0] <= lookback:
        raise ValueError(f"series length {S.shape[0]} must exceed lookback {lookback}")
    if cfg.learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    if cfg.scale:
        lo, hi = S.min(axis=0), S.max(axis=0)
    else:
        lo, hi = np.zeros(S.shape[1]), np.ones(S.shape[1])
    model = LstmModel(LstmWeights.zeros(1, 1, 1), lookback, lo, hi)
    Z = model._scale(S)
    U, Y = make_windows(Z, lookback)
    rng = np.random.default_rng(cfg.seed)
    w = LstmWeights.random(S.shape[1], cfg.hidden, S.shape[1], rng)
    trace = []
    for epoch in range(cfg.epochs):
        loss, grads = loss_and_grad(w, U, Y)
        if not np.isfinite(loss):
            raise DivergenceError(epoch, loss, "epoch")
        trace.append(loss)
        if cfg.clip_norm is not None:
            norm = np.sqrt(sum(np.sum(g**2) for g in grads))
            if norm > cfg.clip_norm:
                grads = [g * (cfg.clip_norm / norm) for g in grads]
        arrays = [a - cfg.learning_rate * g for a, g in zip(w.arrays(), grads)]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise DivergenceError(epoch, np.nan, "epoch")
        w = LstmWeights(*arrays)
    trace.append(loss_and_grad(w, U, Y)[0])
    return LstmModel(w, lookback, lo, hi, tuple(trace))


def lstm_forecast(m: LstmModel, history, horizon: int) -> np.ndarray:
    """Recursive forecasting: each prediction is appended to the window that
    produces the next one. Returns (horizon,) for univariate models."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    H = np.asarray(history, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    if H.shape[0] != m.lookback:
        raise ValueError(f"history length {H.shape[0]} != lookback {m.lookback}")
    window = m._scale(H)
    out = np.empty((horizon, H.shape[1]))
    for k in range(horizon):
        y = run_window(m.weights, window[None])[0]
        out[k] = y
        window = np.vstack([window[1:], y[None]])
    out = m._unscale(out)
    return out[:, 0] if out.shape[1] == 1 else out
