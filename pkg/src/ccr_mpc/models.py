"""Baseline and expert regressors: polynomial least squares, k-nearest
neighbours and a one-hidden-layer perceptron trained by full-batch gradient
descent."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .dataio import Dataset, DimensionError

log = logging.getLogger(__name__)

PER_FEATURE = "per-feature-powers"
TOTAL_DEGREE = "total-degree"


class IllConditionedError(np.linalg.LinAlgError):
    """Basis matrix is rank deficient and no ridge term was supplied."""


class DivergenceError(FloatingPointError):
    """Training loss became non-finite."""

    def __init__(self, iteration: int, loss: float, unit: str = "iteration"):
        super().__init__(f"training diverged at {unit} {iteration} (loss={loss})")
        self.iteration = iteration


def _as_matrix(x, d: int) -> tuple[np.ndarray, bool]:
    a = np.asarray(x, dtype=float)
    single = a.ndim <= 1
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a[None, :] if d > 1 or a.shape[0] == 1 else a[:, None]
        single = a.shape[0] == 1
    if a.shape[1] != d:
        raise DimensionError(f"expected {d} input columns, got shape {np.shape(x)}")
    return a, single


# ---------------------------------------------------------------------------
# polynomial least squares


def _exponents(d: int, degree: int, basis_mode: str) -> np.ndarray:
    if basis_mode == PER_FEATURE:
        rows = [np.zeros(d, dtype=int)]
        for j in range(d):
            for p in range(1, degree + 1):
                e = np.zeros(d, dtype=int)
                e[j] = p
                rows.append(e)
        return np.array(rows)
    if basis_mode == TOTAL_DEGREE:
        if d > 3:
            raise ValueError("total-degree basis is limited to d <= 3")
        rows = []
        for k in range(degree + 1):
            for combo in combinations_with_replacement(range(d), k):
                e = np.zeros(d, dtype=int)
                for j in combo:
                    e[j] += 1
                rows.append(e)
        return np.array(rows)
    raise ValueError(f"unknown basis mode {basis_mode!r}")


def design_matrix(X: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    """Evaluate monomials ``prod_j x_j ** e_j`` for every exponent row."""
    X = np.asarray(X, dtype=float)
    out = np.ones((X.shape[0], exponents.shape[0]))
    for j in range(X.shape[1]):
        col_exp = exponents[:, j]
        if np.any(col_exp):
            out *= X[:, [j]] ** col_exp[None, :]
    return out


@dataclass(frozen=True, eq=False)
class PolynomialModel:
    degree: int
    basis_mode: str
    coefficients: np.ndarray
    ridge: float
    input_dim: int

    @property
    def exponents(self) -> np.ndarray:
        return _exponents(self.input_dim, self.degree, self.basis_mode)

    def predict(self, x) -> np.ndarray:
        return polynomial_predict(self, x)

    def to_dict(self) -> dict:
        return {
            "kind": "polynomial",
            "degree": self.degree,
            "basis_mode": self.basis_mode,
            "coefficients": self.coefficients.tolist(),
            "ridge": self.ridge,
            "input_dim": self.input_dim,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PolynomialModel":
        return cls(
            int(doc["degree"]),
            doc["basis_mode"],
            np.array(doc["coefficients"], dtype=float),
            float(doc["ridge"]),
            int(doc["input_dim"]),
        )


def basis_size(d: int, degree: int, basis_mode: str = PER_FEATURE) -> int:
    return _exponents(d, degree, basis_mode).shape[0]


def polynomial_fit(
    ds: Dataset | tuple,
    degree: int,
    basis_mode: str = PER_FEATURE,
    ridge: float = 1e-8,
) -> PolynomialModel:
    """Least squares on a polynomial basis, optionally ridge-penalised.

    Solves ``min ||Phi theta - y||^2 + ridge ||theta||^2`` through an
    orthogonal (SVD) factorisation of the augmented system rather than the
    normal equations.
    """
    X, y = _xy(ds)
    if degree < 1:
        raise ValueError("degree must be positive")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    exps = _exponents(X.shape[1], degree, basis_mode)
    Phi = design_matrix(X, exps)
    p = Phi.shape[1]
    if ridge > 0:
        A = np.vstack([Phi, np.sqrt(ridge) * np.eye(p)])
        b = np.concatenate([y, np.zeros(p)])
    else:
        A, b = Phi, y
    coef, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
    if ridge == 0 and rank < p:
        raise IllConditionedError(
            f"basis matrix has rank {rank} < {p} columns; supply ridge > 0"
        )
    return PolynomialModel(degree, basis_mode, coef, float(ridge), X.shape[1])


def polynomial_predict(m: PolynomialModel, x) -> np.ndarray:
    X, _ = _as_matrix(x, m.input_dim)
    return design_matrix(X, m.exponents) @ m.coefficients


def _xy(ds) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(ds, Dataset):
        if ds.targets is None:
            raise ValueError("dataset has no targets")
        return ds.features, ds.targets
    X, y = ds
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X, np.asarray(y, dtype=float).ravel()


# ---------------------------------------------------------------------------
# k nearest neighbours


@dataclass(frozen=True, eq=False)
class KnnModel:
    k: int
    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.features.shape[0] == 0:
            raise ValueError("empty k-NN model")
        if not 1 <= self.k <= self.features.shape[0]:
            raise ValueError(f"k={self.k} outside [1, {self.features.shape[0]}]")

    def predict(self, x) -> np.ndarray:
        return knn_predict(self, x)

    def to_dict(self) -> dict:
        return {
            "kind": "knn",
            "k": self.k,
            "features": self.features.tolist(),
            "targets": self.targets.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "KnnModel":
        return cls(int(doc["k"]), np.array(doc["features"], dtype=float), np.array(doc["targets"], dtype=float))


def knn_fit(ds, k: int = 5) -> KnnModel:
    X, y = _xy(ds)
    return KnnModel(int(k), X.copy(), y.copy())


def knn_predict(m: KnnModel, x) -> np.ndarray:
    """Mean target of the k nearest (Euclidean) training rows.

    A stable sort on the distances breaks ties toward the lower row index.
    """
    X, _ = _as_matrix(x, m.features.shape[1])
    out = np.empty(X.shape[0])
    chunk = max(1, 2_000_000 // max(m.features.size, 1))
    for start in range(0, X.shape[0], chunk):
        q = X[start : start + chunk]
        d2 = np.sum((q[:, None, :] - m.features[None, :, :]) ** 2, axis=2)
        nearest = np.argsort(d2, axis=1, kind="stable")[:, : m.k]
        out[start : start + chunk] = m.targets[nearest].mean(axis=1)
    return out


# ---------------------------------------------------------------------------
# one-hidden-layer perceptron

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, s: 1.0 - s**2),
    "sigmoid": (lambda a: 1.0 / (1.0 + np.exp(-a)), lambda a, s: s * (1.0 - s)),
    "relu": (lambda a: np.maximum(a, 0.0), lambda a, s: (a > 0).astype(float)),
}


def softmax(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class MlpConfig:
    hidden: int = 16
    activation: str = "tanh"
    l2_alpha: float = 1e-4
    learning_rate: float = 0.05
    max_iter: int = 2000
    tol: float = 1e-9
    seed: int = 0


@dataclass(frozen=True, eq=False)
class MlpModel:
    W1: np.ndarray  # hidden x input
    b1: np.ndarray
    W2: np.ndarray  # output x hidden
    b2: np.ndarray
    hidden_activation: str = "tanh"
    task: str = "regression"
    l2_alpha: float = 0.0
    loss_trace: tuple = field(default=(), compare=False)

    def __post_init__(self):
        h, k = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape[1] != h or self.b2.shape != (self.W2.shape[0],):
            raise DimensionError("inconsistent MLP parameter shapes")
        if self.l2_alpha < 0:
            raise ValueError("l2_alpha must be non-negative")
        if self.hidden_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def replace(self, params) -> "MlpModel":
        W1, b1, W2, b2 = params
        return MlpModel(W1, b1, W2, b2, self.hidden_activation, self.task, self.l2_alpha, self.loss_trace)

    def predict(self, x):
        out = mlp_predict(self, x)
        return out if self.task == "regression" else out[0]

    def predict_proba(self, x) -> np.ndarray:
        return mlp_predict(self, x)[1]

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.tolist(),
            "b2": self.b2.tolist(),
            "hidden_activation": self.hidden_activation,
            "task": self.task,
            "l2_alpha": self.l2_alpha,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpModel":
        arr = lambda k: np.array(doc[k], dtype=float)
        return cls(arr("W1"), arr("b1"), arr("W2"), arr("b2"), doc["hidden_activation"], doc["task"], float(doc["l2_alpha"]))


def mlp_init(n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator):
    """Uniform weights in +-1/sqrt(fan_in); zero biases."""
    a1 = 1.0 / np.sqrt(n_in)
    a2 = 1.0 / np.sqrt(n_hidden)
    return [
        rng.uniform(-a1, a1, (n_hidden, n_in)),
        np.zeros(n_hidden),
        rng.uniform(-a2, a2, (n_out, n_hidden)),
        np.zeros(n_out),
    ]


def _forward(m: MlpModel, X: np.ndarray):
    act, _ = _ACTIVATIONS[m.hidden_activation]
    a1 = X @ m.W1.T + m.b1
    s1 = act(a1)
    out = s1 @ m.W2.T + m.b2
    return a1, s1, out


def mlp_loss_and_grad(m: MlpModel, X: np.ndarray, Y: np.ndarray):
    """Mean data loss plus ``alpha/2 * ||W||^2`` over both weight matrices,
    with its analytic gradient ``[dW1, db1, dW2, db2]``.

    Regression uses half the squared error; classification uses softmax
    cross-entropy with ``Y`` given as one-hot rows.
    """
    n = X.shape[0]
    a1, s1, out = _forward(m, X)
    if m.task == "regression":
        r = out - Y
        data = 0.5 * np.sum(r**2) / n
        delta2 = r / n
    else:
        p = softmax(out)
        data = -np.sum(Y * np.log(np.clip(p, 1e-300, None))) / n
        delta2 = (p - Y) / n
    penalty = 0.5 * m.l2_alpha * (np.sum(m.W1**2) + np.sum(m.W2**2))
    dW2 = delta2.T @ s1 + m.l2_alpha * m.W2
    db2 = delta2.sum(axis=0)
    _, dact = _ACTIVATIONS[m.hidden_activation]
    delta1 = (delta2 @ m.W2) * dact(a1, s1)
    dW1 = delta1.T @ X + m.l2_alpha * m.W1
    db1 = delta1.sum(axis=0)
    return data + penalty, [dW1, db1, dW2, db2]


def _targets_matrix(y: np.ndarray, task: str, n_classes: int | None) -> tuple[np.ndarray, int]:
    if task == "regression":
        Y = y.reshape(-1, 1) if y.ndim == 1 else y
        return Y, Y.shape[1]
    labels = y.astype(int)
    if np.any(labels != y) or labels.min() < 0:
        raise ValueError("classification targets must be integer labels 0..L-1")
    L = int(n_classes if n_classes is not None else labels.max() + 1)
    return np.eye(L)[labels], L


def mlp_train(
    ds,
    config: MlpConfig | None = None,
    task: str = "regression",
    n_classes: int | None = None,
    init: list[np.ndarray] | None = None,
) -> MlpModel:
    """Full-batch gradient descent ``W <- W - lr * grad``.

    Stops after ``max_iter`` iterations or once the loss improves by less
    than ``tol``; the loss trace is kept on the returned model.
    """
    cfg = config or MlpConfig()
    if cfg.learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    X, y = _xy(ds)
    if X.shape[0] < 1:
        raise ValueError("empty training set")
    Y, n_out = _targets_matrix(y, task, n_classes)
    rng = np.random.default_rng(cfg.seed)
    params = init if init is not None else mlp_init(X.shape[1], cfg.hidden, n_out, rng)
    model = MlpModel(*[np.array(p, dtype=float) for p in params], cfg.activation, task, cfg.l2_alpha)
    trace = []
    prev = np.inf
    for it in range(cfg.max_iter):
        loss, grads = mlp_loss_and_grad(model, X, Y)
        if not np.isfinite(loss):
            raise DivergenceError(it, loss)
        trace.append(loss)
        if prev - loss < cfg.tol and it > 0:
            break
        prev = loss
        model = model.replace([p - cfg.learning_rate * g for p, g in zip(model.params(), grads)])
    final, _ = mlp_loss_and_grad(model, X, Y)
    if not np.isfinite(final):
        raise DivergenceError(len(trace), final)
    trace.append(final)
    return MlpModel(*model.params(), cfg.activation, task, cfg.l2_alpha, tuple(trace))


def mlp_predict(m: MlpModel, x):
    """Regression: output vector (squeezed for a single output).
    Classification: ``(labels, probabilities)``."""
    X, _ = _as_matrix(x, m.input_dim)
    _, _, out = _forward(m, X)
    if m.task == "regression":
        return out[:, 0] if out.shape[1] == 1 else out
    p = softmax(out)
    return np.argmax(p, axis=1), p
