"""Cluster-classify-regress surrogate for discontinuous maps.

1. Cluster the scaled joint vectors ``z = (x~, y~)`` with k-means; the
   target is stretched to ``[0, 10 d]`` so that jumps in ``y`` dominate the
   Euclidean distance.
2. Train a classifier (the gate) on the inputs alone to reproduce the
   cluster labels.
3. Partition the training rows by the gate's own predictions and fit one
   regressor (expert) per label on ``[0, 1]``-scaled targets.

Prediction routes each input to the expert chosen by the gate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import dataio
from .dataio import Dataset, ScalingSpec
from .models import (
    MlpConfig,
    PER_FEATURE,
    knn_fit,
    basis_size,
    mlp_train,
    polynomial_fit,
)
from .trees import GbtConfig, gbt_train, rf_fit

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# k-means


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    objective: float
    trace: list  # objective after every Lloyd iteration of the kept restart
    reseeds: list = field(default_factory=list)  # (iteration, cluster) events


def _sqdist(Z: np.ndarray, C: np.ndarray) -> np.ndarray:
    return np.sum((Z[:, None, :] - C[None, :, :]) ** 2, axis=2)


def clustering_objective(Z: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(np.sum((Z - centroids[labels]) ** 2))


def _seed_centroids(Z: np.ndarray, L: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-squared weighted seeding (k-means++)."""
    n = Z.shape[0]
    centers = [Z[rng.integers(n)]]
    d2 = np.sum((Z - centers[0]) ** 2, axis=1)
    for _ in range(1, L):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(Z[idx])
        d2 = np.minimum(d2, np.sum((Z - Z[idx]) ** 2, axis=1))
    return np.array(centers, dtype=float)


def _lloyd(Z, centroids, max_iter):
    trace, reseeds = [], []
    labels = None
    for it in range(max_iter):
        d2 = _sqdist(Z, centroids)
        new_labels = np.argmin(d2, axis=1)
        counts = np.bincount(new_labels, minlength=centroids.shape[0])
        for l in np.flatnonzero(counts == 0):
            # re-seed an empty cluster at the point farthest from its centroid
            far = int(np.argmax(d2[np.arange(Z.shape[0]), new_labels]))
            centroids[l] = Z[far]
            reseeds.append((it, int(l)))
            log.info("k-means: re-seeded empty cluster %d at row %d", l, far)
            d2 = _sqdist(Z, centroids)
            new_labels = np.argmin(d2, axis=1)
        for l in range(centroids.shape[0]):
            members = Z[new_labels == l]
            if members.shape[0]:
                centroids[l] = members.mean(axis=0)
        trace.append(clustering_objective(Z, new_labels, centroids))
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
    return new_labels, centroids, trace, reseeds


def kmeans(Z, L: int, restarts: int = 10, max_iter: int = 300, seed: int | None = 0) -> KMeansResult:
    """Lloyd's algorithm from ``restarts`` seeded starts; keeps the lowest
    within-cluster sum of squares.

    Clusters are relabelled in ascending order of their centroid's last
    coordinate (the target in the joint space), so label 0 is the
    low-output regime.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if L < 1:
        raise ValueError("need at least one cluster")
    if Z.shape[0] < L:
        raise ValueError(f"cannot form {L} clusters from {Z.shape[0]} points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        labels, centroids, trace, reseeds = _lloyd(Z, _seed_centroids(Z, L, rng), max_iter)
        if best is None or trace[-1] < best.objective:
            best = KMeansResult(labels, centroids, trace[-1], trace, reseeds)
    order = np.lexsort(best.centroids.T[::-1])
    order = np.lexsort((order, best.centroids[:, -1]))
    rank = np.empty(L, dtype=int)
    rank[order] = np.arange(L)
    return KMeansResult(rank[best.labels], best.centroids[order], best.objective, best.trace, best.reseeds)


# ---------------------------------------------------------------------------
# model


@dataclass
class CcrConfig:
    n_clusters: int = 2
    classifier_kind: str = "gbt"  # gbt | random-forest | mlp
    regressor_kind: str = "polynomial"  # polynomial | mlp
    degree: int = 5
    ridge: float = 1e-8
    basis_mode: str = PER_FEATURE
    restarts: int = 10
    max_iter: int = 300
    seed: int = 0
    classifier_params: dict = field(default_factory=dict)
    regressor_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be at least 1")
        if self.classifier_kind not in ("gbt", "random-forest", "mlp"):
            raise ValueError(f"unknown classifier kind {self.classifier_kind!r}")
        if self.regressor_kind not in ("polynomial", "mlp"):
            raise ValueError(f"unknown regressor kind {self.regressor_kind!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class ConstantClassifier:
    label: int
    n_classes: int

    def predict(self, X) -> np.ndarray:
        return np.full(np.atleast_2d(X).shape[0], self.label, dtype=int)

    def predict_proba(self, X) -> np.ndarray:
        p = np.zeros((np.atleast_2d(X).shape[0], self.n_classes))
        p[:, self.label] = 1.0
        return p

    def to_dict(self) -> dict:
        return {"kind": "constant", "label": self.label, "n_classes": self.n_classes}

    @classmethod
    def from_dict(cls, doc: dict) -> "ConstantClassifier":
        return cls(int(doc["label"]), int(doc["n_classes"]))


@dataclass(frozen=True, eq=False)
class CcrModel:
    centroids: np.ndarray
    classifier: object
    regressors: tuple
    scaling: ScalingSpec  # clustering scaling, C = 10 d
    regression_scaling: ScalingSpec  # C = 1
    config: CcrConfig
    fallbacks: tuple = ()
    cluster_trace: tuple = field(default=(), compare=False)
    train_labels: np.ndarray | None = field(default=None, compare=False)

    @property
    def n_clusters(self) -> int:
        return len(self.regressors)

    @property
    def input_dim(self) -> int:
        return self.scaling.d

    def gate(self, x) -> np.ndarray:
        """Expert label for each (physical-unit) input row."""
        X = _rows(x, self.input_dim)
        return np.asarray(self.classifier.predict(dataio.apply_scaling(self.scaling, X)), dtype=int)

    def predict(self, x) -> np.ndarray:
        return ccr_predict(self, x)

    def to_dict(self) -> dict:
        return {
            "kind": "ccr",
            "config": self.config.to_dict(),
            "scaling": self.scaling.to_dict(),
            "regression_scaling": self.regression_scaling.to_dict(),
            "centroids": self.centroids.tolist(),
            "classifier": self.classifier.to_dict(),
            "regressors": [r.to_dict() for r in self.regressors],
            "fallbacks": list(self.fallbacks),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CcrModel":
        from .serialize import model_from_dict

        return cls(
            np.array(doc["centroids"], dtype=float),
            model_from_dict(doc["classifier"]),
            tuple(model_from_dict(r) for r in doc["regressors"]),
            ScalingSpec.from_dict(doc["scaling"]),
            ScalingSpec.from_dict(doc["regression_scaling"]),
            CcrConfig(**doc["config"]),
            tuple(doc.get("fallbacks", ())),
        )


def _rows(x, d: int) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[None, :] if d > 1 or X.shape[0] == 1 else X[:, None]
    if X.shape[1] != d:
        raise dataio.DimensionError(f"expected {d} input columns, got shape {np.shape(x)}")
    return X


def joint_space(ds: Dataset, scaling: ScalingSpec) -> np.ndarray:
    """Scaled ``(x~, y~)`` rows used for clustering."""
    return np.column_stack([
        dataio.apply_scaling(scaling, ds.features),
        dataio.apply_target_scaling(scaling, ds.targets),
    ])


def ccr_cluster(ds: Dataset, L: int, restarts: int = 10, seed: int | None = 0, max_iter: int = 300) -> KMeansResult:
    """Cluster the training pairs in the joint scaled space (C = 10 d)."""
    if ds.targets is None:
        raise ValueError("clustering needs targets")
    scaling = dataio.fit_scaling(ds, mode="clustering")
    return kmeans(joint_space(ds, scaling), L, restarts, max_iter, seed)


def _train_classifier(cfg: CcrConfig, Xs: np.ndarray, labels: np.ndarray, L: int):
    if L == 1 or np.unique(labels).size == 1:
        return ConstantClassifier(int(labels[0]), L)
    params = dict(cfg.classifier_params)
    if cfg.classifier_kind == "gbt":
        gcfg = GbtConfig(**{"rounds": 100, **params})
        return gbt_train((Xs, labels), gcfg, loss="softmax", n_classes=L)
    if cfg.classifier_kind == "random-forest":
        params.setdefault("n_estimators", 100)
        params.setdefault("seed", cfg.seed)
        return rf_fit((Xs, labels), task="classification", n_classes=L, **params)
    mcfg = MlpConfig(**{"seed": cfg.seed, "learning_rate": 0.5, **params})
    return mlp_train((Xs, labels), mcfg, task="classification", n_classes=L)


def _min_samples(cfg: CcrConfig, d: int) -> int:
    if cfg.regressor_kind == "polynomial":
        return basis_size(d, cfg.degree, cfg.basis_mode)
    return 1


def _fit_regressor(cfg: CcrConfig, X: np.ndarray, y: np.ndarray):
    if cfg.regressor_kind == "polynomial":
        return polynomial_fit((X, y), cfg.degree, cfg.basis_mode, cfg.ridge)
    mcfg = MlpConfig(**{"seed": cfg.seed, **cfg.regressor_params})
    return mlp_train((X, y), mcfg, task="regression")


def ccr_fit(ds: Dataset, config: CcrConfig | None = None) -> CcrModel:
    """Cluster, train the gate on inputs only, then fit one expert per
    gate-predicted partition.

    A partition too small for its expert falls back to the rows carrying
    that cluster label, and failing that to all rows; each fallback is
    logged and recorded on the model.
    """
    cfg = config or CcrConfig()
    if ds.targets is None:
        raise ValueError("ccr_fit needs targets")
    L = cfg.n_clusters
    if ds.n < L:
        raise ValueError(f"{ds.n} rows cannot support {L} clusters")
    scaling = dataio.fit_scaling(ds, mode="clustering")
    reg_scaling = scaling.with_C(1.0)
    km = kmeans(joint_space(ds, scaling), L, cfg.restarts, cfg.max_iter, cfg.seed)
    Xs = dataio.apply_scaling(scaling, ds.features)
    ys = dataio.apply_target_scaling(reg_scaling, ds.targets)
    clf = _train_classifier(cfg, Xs, km.labels, L)
    predicted = np.asarray(clf.predict(Xs), dtype=int)
    need = _min_samples(cfg, ds.d)
    regressors, fallbacks = [], []
    for l in range(L):
        rows = predicted == l
        if rows.sum() < need:
            rows = km.labels == l
            source = "cluster"
            if rows.sum() < need:
                rows = np.ones(ds.n, dtype=bool)
                source = "all"
            fallbacks.append((l, source))
            log.warning("CCR expert %d: gate partition too small, fitted on %s rows (%d)", l, source, int(rows.sum()))
        regressors.append(_fit_regressor(cfg, Xs[rows], ys[rows]))
    return CcrModel(
        km.centroids, clf, tuple(regressors), scaling, reg_scaling, cfg,
        tuple(fallbacks), tuple(km.trace), km.labels,
    )


def ccr_predict(m: CcrModel, x) -> np.ndarray:
    """Hard-gated expert prediction in physical units."""
    X = _rows(x, m.input_dim)
    Xs = dataio.apply_scaling(m.scaling, X)
    labels = np.asarray(m.classifier.predict(Xs), dtype=int)
    out = np.empty(X.shape[0])
    for l in np.unique(labels):
        rows = labels == l
        out[rows] = np.asarray(m.regressors[l].predict(Xs[rows]), dtype=float).ravel()
    return dataio.invert_target_scaling(m.regression_scaling, out)


# ---------------------------------------------------------------------------
# single-model baselines on the same scaled inputs


@dataclass(frozen=True, eq=False)
class ScaledRegressor:
    """A plain regressor fitted on [0, 1]-scaled inputs and targets, so
    baselines see exactly the representation the CCR experts see."""

    model: object
    scaling: ScalingSpec

    @property
    def input_dim(self) -> int:
        return self.scaling.d

    def predict(self, x) -> np.ndarray:
        X = _rows(x, self.input_dim)
        out = np.asarray(self.model.predict(dataio.apply_scaling(self.scaling, X)), dtype=float).ravel()
        return dataio.invert_target_scaling(self.scaling, out)

    def to_dict(self) -> dict:
        return {"kind": "scaled", "scaling": self.scaling.to_dict(), "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "ScaledRegressor":
        from .serialize import model_from_dict

        return cls(model_from_dict(doc["model"]), ScalingSpec.from_dict(doc["scaling"]))


FORWARD_KINDS = ("ccr", "polynomial", "knn", "random-forest", "gbt", "mlp")


def fit_forward_model(ds: Dataset, kind: str = "ccr", **params):
    """Fit a forward surrogate of the given kind.

    ``ccr`` forwards ``params`` to :class:`CcrConfig`; the other kinds are
    wrapped in :class:`ScaledRegressor`.
    """
    if kind == "ccr":
        return ccr_fit(ds, CcrConfig(**params))
    scaling = dataio.fit_scaling(ds, C=1.0)
    Xs = dataio.apply_scaling(scaling, ds.features)
    ys = dataio.apply_target_scaling(scaling, ds.targets)
    if kind == "polynomial":
        inner = polynomial_fit((Xs, ys), params.get("degree", 5), params.get("basis_mode", PER_FEATURE), params.get("ridge", 1e-8))
    elif kind == "knn":
        inner = knn_fit((Xs, ys), params.get("k", 5))
    elif kind == "random-forest":
        inner = rf_fit((Xs, ys), **params)
    elif kind == "gbt":
        inner = gbt_train((Xs, ys), GbtConfig(**params))
    elif kind == "mlp":
        inner = mlp_train((Xs, ys), MlpConfig(**params), task="regression")
    else:
        raise ValueError(f"unknown forward model kind {kind!r}; expected one of {FORWARD_KINDS}")
    return ScaledRegressor(inner, scaling)
