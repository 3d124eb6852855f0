"""Versioned JSON documents for every trained object.

Each object's ``to_dict`` carries a ``kind`` tag; :func:`model_from_dict`
dispatches on it. Files wrap the document with a format version.
"""
from __future__ import annotations

import json
from pathlib import Path

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Unknown kind or unsupported document version."""


def _registry() -> dict:
    from .ccr import CcrModel, ConstantClassifier, ScaledRegressor
    from .lstm import LstmModel
    from .models import KnnModel, MlpModel, PolynomialModel
    from .mpc import CalendarGbtForecaster, LstmForecaster
    from .trees import ForestModel, GbtEnsemble

    return {
        "polynomial": PolynomialModel,
        "knn": KnnModel,
        "mlp": MlpModel,
        "gbt": GbtEnsemble,
        "forest": ForestModel,
        "lstm": LstmModel,
        "ccr": CcrModel,
        "constant": ConstantClassifier,
        "scaled": ScaledRegressor,
        "forecaster-gbt-calendar": CalendarGbtForecaster,
        "forecaster-lstm": LstmForecaster,
    }


def model_from_dict(doc: dict):
    kind = doc.get("kind")
    cls = _registry().get(kind)
    if cls is None:
        raise FormatError(f"unknown document kind {kind!r}")
    return cls.from_dict(doc)


def dumps(obj) -> str:
    return json.dumps({"format_version": FORMAT_VERSION, "model": obj.to_dict()})


def loads(text: str):
    doc = json.loads(text)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version!r}")
    return model_from_dict(doc["model"])


def dump(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))


def load(path):
    return loads(Path(path).read_text())
