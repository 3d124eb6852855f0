"""Regression trees grown by exact greedy split search, gradient-boosted
ensembles (squared and softmax losses) and a bagged random forest.

All trees share one builder. A node holding instances ``I`` with gradient
sums ``G`` (one column per output) and hessian sum ``H`` scores
``sum_k G_k**2 / (H + lam)``; a split is worth half the children's scores
minus the parent's, less ``gamma``. With ``g = -y``, ``h = 1`` and
``lam = gamma = 0`` this is exactly squared-error (variance) reduction,
which is how the forest reuses the builder.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .dataio import Dataset, DimensionError
from .models import softmax

log = logging.getLogger(__name__)


class DegenerateLeafError(ValueError):
    """Leaf hessian plus regulariser is not positive."""


class TrainingError(RuntimeError):
    pass


def leaf_weight(g_sum: float, h_sum: float, lam: float) -> float:
    """Optimal leaf score ``-G / (H + lam)``."""
    denom = h_sum + lam
    if denom <= 0:
        raise DegenerateLeafError(f"h_sum + lambda = {denom} <= 0")
    return -g_sum / denom


def split_gain(gL: float, hL: float, gR: float, hR: float, lam: float, gamma: float) -> float:
    """Loss reduction of splitting a leaf into (L, R) children."""
    if hL + lam <= 0 or hR + lam <= 0:
        raise DegenerateLeafError("child hessian plus lambda must be positive")
    return 0.5 * (
        gL**2 / (hL + lam) + gR**2 / (hR + lam) - (gL + gR) ** 2 / (hL + hR + lam)
    ) - gamma


@dataclass(frozen=True, eq=False)
class Split:
    gain: float
    feature: int
    threshold: float
    n_left: int


def find_best_split(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    lam: float = 1.0,
    gamma: float = 0.0,
    min_leaf: int = 1,
    features: np.ndarray | None = None,
) -> Split | None:
    """Best (feature, threshold) over all midpoints between consecutive
    distinct sorted values, or ``None`` when no split has positive gain.

    Instances with ``x <= threshold`` go left. Ties resolve to the lowest
    feature index, then the lowest threshold.
    """
    n = X.shape[0]
    if n < 2 * min_leaf:
        return None
    G = g.reshape(n, -1)
    if features is None:
        features = np.arange(X.shape[1])
    features = np.sort(np.asarray(features))
    Xf = X[:, features]
    order = np.argsort(Xf, axis=0, kind="stable")
    Xs = np.take_along_axis(Xf, order, axis=0)
    GL = np.cumsum(G[order], axis=0)  # (n, f, m)
    HL = np.cumsum(h[order], axis=0)  # (n, f)
    Gt = GL[-1]
    Ht = HL[-1]
    GL, HL = GL[:-1], HL[:-1]
    GR, HR = Gt[None] - GL, Ht[None] - HL
    with np.errstate(divide="ignore", invalid="ignore"):
        parent = np.sum(Gt**2, axis=-1) / (Ht + lam)
        gains = 0.5 * (
            np.sum(GL**2, axis=-1) / (HL + lam) + np.sum(GR**2, axis=-1) / (HR + lam) - parent[None]
        ) - gamma
    pos = np.arange(1, n)[:, None]
    valid = (Xs[1:] > Xs[:-1]) & (pos >= min_leaf) & (n - pos >= min_leaf)
    valid &= (HL + lam > 0) & (HR + lam > 0)
    gains = np.where(valid, gains, -np.inf)
    top = float(np.max(gains))
    if not np.isfinite(top) or top <= 0:
        return None
    # gains equal up to rounding count as ties: lowest feature, then lowest threshold
    near = gains >= top - 1e-12 * max(1.0, abs(top))
    j = int(np.argmax(near.any(axis=0)))
    i = int(np.argmax(near[:, j]))
    gain = float(gains[i, j])
    lo, hi = Xs[i, j], Xs[i + 1, j]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return Split(gain, int(features[j]), float(thr), i + 1)


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays. ``feature[k] == -1`` marks a leaf whose output is
    ``value[k]`` (one entry per output column)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.maximum(f, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, nxt, node)
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Tree":
        return cls(
            np.array(doc["feature"], dtype=np.int64),
            np.array(doc["threshold"], dtype=float),
            np.array(doc["left"], dtype=np.int64),
            np.array(doc["right"], dtype=np.int64),
            np.array(doc["value"], dtype=float).reshape(len(doc["feature"]), -1),
        )


def build_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    lam: float,
    gamma: float = 0.0,
    max_depth: int | None = None,
    min_leaf: int = 1,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tree:
    """Grow a tree greedily from a single leaf; leaves get ``-G/(H+lam)``."""
    n, d = X.shape
    G = g.reshape(n, -1)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        Gs = G[idx].sum(axis=0)
        Hs = h[idx].sum()
        if Hs + lam <= 0:
            raise DegenerateLeafError(f"h_sum + lambda = {Hs + lam} <= 0")
        value.append(-Gs / (Hs + lam))
        return len(feature) - 1

    stack = [(new_node(np.arange(n)), np.arange(n), 0)]
    while stack:
        k, idx, depth = stack.pop()
        if max_depth is not None and depth >= max_depth:
            continue
        feats = None
        if max_features is not None and max_features < d:
            feats = (rng or np.random.default_rng()).choice(d, size=max_features, replace=False)
        s = find_best_split(X[idx], G[idx], h[idx], lam, gamma, min_leaf, feats)
        if s is None:
            continue
        go_left = X[idx, s.feature] <= s.threshold
        li, ri = idx[go_left], idx[~go_left]
        feature[k] = s.feature
        threshold[k] = s.threshold
        left[k] = new_node(li)
        right[k] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[k], ri, depth + 1))
        stack.append((left[k], li, depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float).reshape(len(feature), -1),
    )


class _Packed:
    """All trees of an ensemble in one node table, descended together."""

    def __init__(self, trees: list[Tree]):
        offsets = np.cumsum([0] + [t.n_nodes for t in trees[:-1]])
        self.roots = np.asarray(offsets, dtype=np.int64)
        self.feature = np.concatenate([t.feature for t in trees])
        self.threshold = np.concatenate([t.threshold for t in trees])
        shift = lambda t, o, a: np.where(a >= 0, a + o, -1)
        self.left = np.concatenate([shift(t, o, t.left) for t, o in zip(trees, offsets)])
        self.right = np.concatenate([shift(t, o, t.right) for t, o in zip(trees, offsets)])
        self.value = np.concatenate([t.value for t in trees])

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        """(n_samples, n_trees, n_outputs) leaf outputs."""
        n = X.shape[0]
        node = np.broadcast_to(self.roots, (n, self.roots.shape[0])).copy()
        rows = np.arange(n)[:, None]
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.maximum(f, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, nxt, node)
        return self.value[node]


def _check_dim(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    if X.ndim == 1:
        X = X[None, :] if d > 1 or X.shape[0] == 1 else X[:, None]
    if X.shape[1] != d:
        raise DimensionError(f"expected {d} input columns, got shape {X.shape}")
    return X


# ---------------------------------------------------------------------------
# gradient boosting


@dataclass
class GbtConfig:
    rounds: int | None = None  # 200 for regression, 100 for classification
    learning_rate: float = 0.1
    lam: float = 1.0
    gamma: float = 0.0
    max_depth: int = 4
    min_leaf: int = 1
    base_score: float | None = None


@dataclass(frozen=True, eq=False)
class GbtEnsemble:
    task: str
    trees: tuple  # rounds x n_classes (1 for regression)
    learning_rate: float
    lam: float
    gamma: float
    max_depth: int
    base_score: np.ndarray
    n_features: int
    n_classes: int = 1
    train_loss: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning rate must lie in (0, 1]")
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be non-negative")

    @property
    def rounds(self) -> int:
        return len(self.trees)

    @cached_property
    def _packed(self) -> _Packed | None:
        flat = [t for rnd in self.trees for t in rnd]
        return _Packed(flat) if flat else None

    def raw_scores(self, X) -> np.ndarray:
        X = _check_dim(X, self.n_features)
        k = self.n_classes if self.task == "classification" else 1
        scores = np.broadcast_to(self.base_score, (X.shape[0], k)).astype(float)
        if self._packed is not None:
            vals = self._packed.leaf_values(X)[..., 0]
            vals = vals.reshape(X.shape[0], self.rounds, k).sum(axis=1)
            scores = scores + self.learning_rate * vals
        return scores

    def predict(self, X):
        return gbt_predict(self, X) if self.task == "regression" else gbt_predict(self, X)[0]

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.raw_scores(X))

    def to_dict(self) -> dict:
        return {
            "kind": "gbt",
            "task": self.task,
            "learning_rate": self.learning_rate,
            "lam": self.lam,
            "gamma": self.gamma,
            "max_depth": self.max_depth,
            "base_score": np.asarray(self.base_score).tolist(),
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "trees": [[t.to_dict() for t in rnd] for rnd in self.trees],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GbtEnsemble":
        trees = tuple(tuple(Tree.from_dict(t) for t in rnd) for rnd in doc["trees"])
        return cls(
            doc["task"], trees, float(doc["learning_rate"]), float(doc["lam"]), float(doc["gamma"]),
            int(doc["max_depth"]), np.array(doc["base_score"], dtype=float), int(doc["n_features"]),
            int(doc["n_classes"]),
        )


def _gradients(task: str, y, scores, n_classes):
    if task == "regression":
        return (scores - y[:, None]), np.ones_like(scores)
    p = softmax(scores)
    onehot = np.eye(n_classes)[y]
    return p - onehot, p * (1.0 - p)


def _train_loss(task, y, scores, n_classes):
    if task == "regression":
        return float(np.mean((scores[:, 0] - y) ** 2))
    p = softmax(scores)
    return float(-np.mean(np.log(np.clip(p[np.arange(len(y)), y], 1e-300, None))))


def gbt_train(ds, config: GbtConfig | None = None, loss: str = "squared", n_classes: int | None = None) -> GbtEnsemble:
    """Additive boosting: each round fits one tree per output to the current
    (g, h) statistics of the loss, leaf scores scaled by the learning rate.

    ``loss="squared"`` gives regression (g = yhat - y, h = 1);
    ``loss="softmax"`` gives multiclass classification on labels 0..L-1
    (g = p - 1{y = k}, h = p (1 - p), one tree per class per round).
    """
    cfg = config or GbtConfig()
    X, y = _dataset_xy(ds)
    task = {"squared": "regression", "softmax": "classification"}.get(loss)
    if task is None:
        raise ValueError(f"unknown loss {loss!r}")
    if task == "classification":
        labels = y.astype(int)
        if np.any(labels != y) or labels.min() < 0:
            raise ValueError("classification requires integer labels 0..L-1")
        y = labels
        L = int(n_classes if n_classes is not None else labels.max() + 1)
        base = np.zeros(L) if cfg.base_score is None else np.full(L, cfg.base_score)
        rounds = 100 if cfg.rounds is None else cfg.rounds
    else:
        L = 1
        base = np.array([y.mean() if cfg.base_score is None else cfg.base_score])
        rounds = 200 if cfg.rounds is None else cfg.rounds
    if rounds < 1:
        raise ValueError("need at least one boosting round")
    scores = np.tile(base, (X.shape[0], 1)).astype(float)
    trees = []
    trace = [_train_loss(task, y, scores, L)]
    for r in range(rounds):
        g, h = _gradients(task, y, scores, L)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            raise TrainingError(f"non-finite gradient statistics in round {r}")
        rnd = []
        for k in range(L):
            t = build_tree(X, g[:, k], h[:, k], cfg.lam, cfg.gamma, cfg.max_depth, cfg.min_leaf)
            scores[:, k] += cfg.learning_rate * t.predict(X)[:, 0]
            rnd.append(t)
        trees.append(tuple(rnd))
        trace.append(_train_loss(task, y, scores, L))
    return GbtEnsemble(
        task, tuple(trees), cfg.learning_rate, cfg.lam, cfg.gamma, cfg.max_depth,
        base, X.shape[1], L, tuple(trace),
    )


def gbt_predict(m: GbtEnsemble, x):
    """Regression: ``base + lr * sum(tree outputs)``.
    Classification: ``(labels, softmax probabilities)``."""
    scores = m.raw_scores(x)
    if m.task == "regression":
        return scores[:, 0]
    p = softmax(scores)
    return np.argmax(p, axis=1), p


def _dataset_xy(ds):
    if isinstance(ds, Dataset):
        if ds.targets is None:
            raise ValueError("dataset has no targets")
        return ds.features, ds.targets
    X, y = ds
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    if X.ndim == 1:
        X = X[:, None]
    return X, np.asarray(y, dtype=float).ravel()


# ---------------------------------------------------------------------------
# random forest


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple
    seeds: tuple
    max_features: int
    min_leaf: int
    n_features: int
    task: str = "regression"
    n_classes: int = 1
    bootstrap: bool = True

    @cached_property
    def _packed(self) -> _Packed:
        return _Packed(list(self.trees))

    def tree_outputs(self, X) -> np.ndarray:
        X = _check_dim(X, self.n_features)
        return self._packed.leaf_values(X)

    def predict(self, X):
        out = self.tree_outputs(X).mean(axis=1)
        if self.task == "regression":
            return out[:, 0]
        return np.argmax(out, axis=1)

    def predict_proba(self, X) -> np.ndarray:
        return self.tree_outputs(X).mean(axis=1)

    def to_dict(self) -> dict:
        return {
            "kind": "forest",
            "task": self.task,
            "n_classes": self.n_classes,
            "max_features": self.max_features,
            "min_leaf": self.min_leaf,
            "n_features": self.n_features,
            "bootstrap": self.bootstrap,
            "seeds": list(self.seeds),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ForestModel":
        return cls(
            tuple(Tree.from_dict(t) for t in doc["trees"]), tuple(doc["seeds"]), int(doc["max_features"]),
            int(doc["min_leaf"]), int(doc["n_features"]), doc["task"], int(doc["n_classes"]), bool(doc["bootstrap"]),
        )


def rf_fit(
    ds,
    n_estimators: int = 100,
    max_features: int | None = None,
    min_leaf: int = 1,
    seed: int = 0,
    bootstrap: bool = True,
    max_depth: int | None = None,
    task: str = "regression",
    n_classes: int | None = None,
) -> ForestModel:
    """Bagged squared-error trees with ``max_features`` candidates per split
    (default ``ceil(d / 3)``).

    Classification grows multi-output trees on one-hot targets; the summed
    variance reduction is then the Gini decrease and leaves hold class
    frequencies.
    """
    X, y = _dataset_xy(ds)
    n, d = X.shape
    if n_estimators < 1:
        raise ValueError("n_estimators must be at least 1")
    if min_leaf > n:
        raise ValueError(f"min_leaf={min_leaf} exceeds the {n} training rows")
    if max_features is None:
        max_features = int(np.ceil(d / 3))
    max_features = int(min(max(max_features, 1), d))
    if task == "classification":
        labels = y.astype(int)
        L = int(n_classes if n_classes is not None else labels.max() + 1)
        target = np.eye(L)[labels]
    else:
        L = 1
        target = y[:, None]
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(n_estimators)]
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        idx = rng.integers(0, n, n) if bootstrap else np.arange(n)
        trees.append(
            build_tree(X[idx], -target[idx], np.ones(len(idx)), 0.0, 0.0, max_depth, min_leaf, max_features, rng)
        )
    return ForestModel(tuple(trees), tuple(seeds), max_features, min_leaf, d, task, L, bootstrap)


def rf_predict(m: ForestModel, x) -> np.ndarray:
    """Arithmetic mean of the individual tree predictions."""
    return m.predict(x)
