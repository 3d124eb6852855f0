"""Tabular data handling: CSV loading, calendar pseudo-features, min-max
scaling and train/test splitting.

Scaling follows the cluster/regress convention: features map to [0, 1] and
the target maps to [0, C], where ``C = 10 * d`` when the scaled joint
vectors are clustered and ``C = 1`` for regression.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

DEFAULT_TIMESTAMP_FORMAT = "%d/%m/%Y %H:%M:%S"

CALENDAR_FIELDS = (
    "hour",
    "day_of_week",
    "quarter",
    "month",
    "year",
    "day_of_year",
    "day_of_month",
    "week_of_year",
)


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


class DimensionError(ValueError):
    """Raised when array shapes disagree with a fitted specification."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-named feature matrix with an aligned (optional) target vector."""

    feature_names: tuple[str, ...]
    features: np.ndarray
    targets: np.ndarray | None = None
    timestamps: np.ndarray | None = None
    target_name: str | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {X.shape}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if len(self.feature_names) != X.shape[1]:
            raise DimensionError(
                f"{len(self.feature_names)} feature names for {X.shape[1]} columns"
            )
        if not np.all(np.isfinite(X)):
            raise DataError("features contain NaN or Inf")
        if self.targets is not None:
            y = np.asarray(self.targets, dtype=float).ravel()
            if y.shape[0] != X.shape[0]:
                raise DimensionError(
                    f"{X.shape[0]} feature rows but {y.shape[0]} targets"
                )
            if not np.all(np.isfinite(y)):
                raise DataError("targets contain NaN or Inf")
            object.__setattr__(self, "targets", y)
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype="datetime64[s]")
            if ts.shape[0] != X.shape[0]:
                raise DimensionError("timestamps not aligned with feature rows")
            object.__setattr__(self, "timestamps", ts)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.feature_names,
            self.features[index],
            None if self.targets is None else self.targets[index],
            None if self.timestamps is None else self.timestamps[index],
            self.target_name,
        )


@dataclass(frozen=True, eq=False)
class ScalingSpec:
    """Per-column min/max for features plus (min, max, C) for the target.

    Degenerate columns (max == min) scale to 0 and invert to the column
    value.
    """

    feature_min: np.ndarray
    feature_max: np.ndarray
    target_min: float = 0.0
    target_max: float = 1.0
    C: float = 1.0

    def __post_init__(self):
        lo = np.asarray(self.feature_min, dtype=float).ravel()
        hi = np.asarray(self.feature_max, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise DimensionError("feature_min and feature_max differ in length")
        if np.any(hi < lo) or self.target_max < self.target_min:
            raise DataError("scaling max below min")
        if self.C < 1:
            raise DataError(f"target scale constant must be >= 1, got {self.C}")
        object.__setattr__(self, "feature_min", lo)
        object.__setattr__(self, "feature_max", hi)

    @property
    def degenerate(self) -> np.ndarray:
        """Boolean mask of constant feature columns."""
        return self.feature_max == self.feature_min

    @property
    def target_degenerate(self) -> bool:
        return self.target_max == self.target_min

    @property
    def d(self) -> int:
        return self.feature_min.shape[0]

    def with_C(self, C: float) -> "ScalingSpec":
        return ScalingSpec(self.feature_min, self.feature_max, self.target_min, self.target_max, C)

    def to_dict(self) -> dict:
        return {
            "feature_min": self.feature_min.tolist(),
            "feature_max": self.feature_max.tolist(),
            "target_min": self.target_min,
            "target_max": self.target_max,
            "C": self.C,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScalingSpec":
        return cls(
            np.array(doc["feature_min"], dtype=float),
            np.array(doc["feature_max"], dtype=float),
            float(doc["target_min"]),
            float(doc["target_max"]),
            float(doc["C"]),
        )


@dataclass(frozen=True, eq=False)
class CalendarFeatures:
    hour: int
    day_of_week: int
    quarter: int
    month: int
    year: int
    day_of_year: int
    day_of_month: int
    week_of_year: int

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, f) for f in CALENDAR_FIELDS)


@dataclass
class DataConfig:
    """JSON-backed loader settings."""

    target_column: str
    timestamp_column: str | None = None
    timestamp_format: str = DEFAULT_TIMESTAMP_FORMAT
    scaling_mode: str = "regression"

    @classmethod
    def from_json(cls, path) -> "DataConfig":
        doc = json.loads(Path(path).read_text())
        known = {"target_column", "timestamp_column", "timestamp_format", "scaling_mode"}
        unknown = set(doc) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        if doc.get("scaling_mode", "regression") not in ("regression", "clustering"):
            raise DataError("scaling_mode must be 'regression' or 'clustering'")
        return cls(**doc)


def load_csv(
    path,
    target_column: str | None,
    timestamp_column: str | None = None,
    timestamp_format: str = DEFAULT_TIMESTAMP_FORMAT,
    feature_columns: Sequence[str] | None = None,
) -> Dataset:
    """Read a comma-separated file with one header row into a :class:`Dataset`.

    Every column other than the target and timestamp columns becomes a
    feature unless ``feature_columns`` restricts the selection. Row numbers
    in error messages are 1-based data rows (the header is row 0).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: empty file") from None
    if frame.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    columns = list(frame.columns)
    for name in (target_column, timestamp_column):
        if name is not None and name not in columns:
            raise DataError(f"{path}: missing column {name!r}")
    if feature_columns is None:
        feature_columns = [c for c in columns if c not in (target_column, timestamp_column)]
    else:
        for name in feature_columns:
            if name not in columns:
                raise DataError(f"{path}: missing column {name!r}")

    def numeric(name: str) -> np.ndarray:
        raw = frame[name].str.strip()
        try:
            # correctly rounded parse, unlike pandas' fast float path
            values = raw.to_numpy(dtype=str).astype(float)
        except ValueError:
            values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            row = int(bad[0]) + 1
            raise DataError(
                f"{path}: row {row}, column {name!r}: cannot parse {raw.iloc[bad[0]]!r} as a finite number"
            )
        return values

    X = np.column_stack([numeric(c) for c in feature_columns]) if feature_columns else np.empty((frame.shape[0], 0))
    y = numeric(target_column) if target_column is not None else None
    ts = None
    if timestamp_column is not None:
        parsed = pd.to_datetime(frame[timestamp_column], format=timestamp_format, errors="coerce")
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            row = int(bad[0]) + 1
            raise DataError(
                f"{path}: row {row}, column {timestamp_column!r}: "
                f"cannot parse {frame[timestamp_column].iloc[bad[0]]!r} with format {timestamp_format!r}"
            )
        ts = parsed.to_numpy(dtype="datetime64[s]")
    return Dataset(tuple(feature_columns), X, y, ts, target_column)


def write_csv(
    path,
    columns: dict[str, np.ndarray],
    timestamps: np.ndarray | None = None,
    timestamp_column: str = "timestamp",
    timestamp_format: str = DEFAULT_TIMESTAMP_FORMAT,
) -> None:
    """Write named columns (and optional timestamps first) as CSV.

    Floats are written with ``repr`` precision so reruns are byte-identical.
    """
    frame = pd.DataFrame({k: np.asarray(v) for k, v in columns.items()})
    if timestamps is not None:
        stamps = pd.to_datetime(np.asarray(timestamps)).strftime(timestamp_format)
        frame.insert(0, timestamp_column, stamps)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def fit_scaling(ds: Dataset, C: float | None = None, mode: str = "regression") -> ScalingSpec:
    """Column minima/maxima of the (training) data.

    ``C`` defaults to ``10 * d`` in ``"clustering"`` mode and 1 otherwise.
    """
    if ds.n < 1:
        raise DataError("cannot fit scaling on an empty dataset")
    if C is None:
        if mode == "clustering":
            C = 10.0 * ds.d
        elif mode == "regression":
            C = 1.0
        else:
            raise ValueError(f"unknown scaling mode {mode!r}")
    X = ds.features
    if ds.targets is not None:
        tmin, tmax = float(ds.targets.min()), float(ds.targets.max())
    else:
        tmin, tmax = 0.0, 1.0
    return ScalingSpec(X.min(axis=0), X.max(axis=0), tmin, tmax, float(C))


def _as_feature_matrix(spec: ScalingSpec, data) -> tuple[np.ndarray, bool]:
    a = np.asarray(data, dtype=float)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != spec.d:
        raise DimensionError(f"expected {spec.d} columns, got shape {np.shape(data)}")
    return a, single


def apply_scaling(spec: ScalingSpec, data) -> np.ndarray:
    """Map features to [0, 1] on the training range (degenerate columns to 0)."""
    a, single = _as_feature_matrix(spec, data)
    span = spec.feature_max - spec.feature_min
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (a - spec.feature_min) / safe, 0.0)
    return out[0] if single else out


def invert_scaling(spec: ScalingSpec, data) -> np.ndarray:
    a, single = _as_feature_matrix(spec, data)
    span = spec.feature_max - spec.feature_min
    out = spec.feature_min + a * span
    return out[0] if single else out


def apply_target_scaling(spec: ScalingSpec, y) -> np.ndarray:
    """Map targets to [0, C]."""
    y = np.asarray(y, dtype=float)
    span = spec.target_max - spec.target_min
    if span == 0:
        return np.zeros_like(y)
    return spec.C * ((y - spec.target_min) / span)


def invert_target_scaling(spec: ScalingSpec, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    span = spec.target_max - spec.target_min
    return spec.target_min + y * span / spec.C


def calendar_features(t) -> CalendarFeatures:
    """Eight integer pseudo-features of a timestamp (ISO-8601 week numbers)."""
    if isinstance(t, np.datetime64):
        t = pd.Timestamp(t).to_pydatetime()
    elif not isinstance(t, datetime):
        t = pd.Timestamp(t).to_pydatetime()
    return CalendarFeatures(
        hour=t.hour,
        day_of_week=t.weekday(),
        quarter=(t.month - 1) // 3 + 1,
        month=t.month,
        year=t.year,
        day_of_year=t.timetuple().tm_yday,
        day_of_month=t.day,
        week_of_year=t.isocalendar()[1],
    )


def calendar_matrix(timestamps) -> np.ndarray:
    """Vectorised :func:`calendar_features`: one row per timestamp, columns in
    ``CALENDAR_FIELDS`` order."""
    idx = pd.DatetimeIndex(np.asarray(timestamps, dtype="datetime64[s]"))
    cols = [
        idx.hour,
        idx.dayofweek,
        idx.quarter,
        idx.month,
        idx.year,
        idx.dayofyear,
        idx.day,
        idx.isocalendar().week.to_numpy(),
    ]
    return np.column_stack([np.asarray(c, dtype=float) for c in cols])


def split(
    ds: Dataset,
    fraction: float = 0.5,
    mode: str = "chronological",
    seed: int | None = None,
) -> tuple[Dataset, Dataset]:
    """Split into (train, test); the train side gets ``floor(fraction * N)`` rows."""
    if ds.n < 2:
        raise DataError("need at least 2 rows to split")
    if not 0 < fraction < 1:
        raise DataError(f"fraction must lie in (0, 1), got {fraction}")
    n_train = int(np.floor(fraction * ds.n))
    if n_train < 1 or n_train > ds.n - 1:
        raise DataError(f"fraction {fraction} leaves one side of a {ds.n}-row split empty")
    if mode == "chronological":
        order = np.arange(ds.n)
    elif mode == "random":
        order = np.random.default_rng(seed).permutation(ds.n)
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    train_idx = order[:n_train]
    test_idx = order[n_train:]
    if mode == "random":
        train_idx, test_idx = np.sort(train_idx), np.sort(test_idx)
    return ds.take(train_idx), ds.take(test_idx)
