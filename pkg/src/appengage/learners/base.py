"""Uniform train / predict_proba interface and model serialization."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..core import DomainError

MODEL_VERSION = 1

_REGISTRY: dict[str, type["TrainedModel"]] = {}


class ModelError(DomainError):
    """Bad training input or misuse of a fitted model."""


class SchemaMismatch(ModelError):
    """Feature vectors were built against a different schema than the model."""


def register(kind: str):
    def deco(cls):
        cls.kind = kind
        _REGISTRY[kind] = cls
        return cls
    return deco


@dataclass(frozen=True)
class Learner:
    """A learner kind plus hyperparameters; unspecified ones take defaults."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _REGISTRY:
            raise ModelError(f"unknown learner kind {self.kind!r}; known: {sorted(_REGISTRY)}")


def check_xy(X, y=None, min_classes: int = 2):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ModelError(f"expected a non-empty 2-d feature matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ModelError("feature matrix contains NaN or infinite values")
    if y is None:
        return X
    y = np.asarray(y)
    if y.shape[0] != X.shape[0]:
        raise ModelError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if min_classes and np.unique(y).size < min_classes:
        raise ModelError("need at least two classes to train a classifier")
    return X, y


def canonical_order(X: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """Row permutation that depends only on row contents.

    Sorting rows lexicographically before any seeded shuffling makes training
    invariant to the order rows arrive in.
    """
    # np.lexsort treats the last key as primary, so column 0 goes last.
    keys = [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    if y is not None:
        keys.insert(0, np.asarray(y))
    return np.lexsort(keys) if keys else np.arange(X.shape[0])


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        return cls(mean, np.where(std > 0, std, 1.0))

    @classmethod
    def identity(cls, d: int) -> "Standardizer":
        return cls(np.zeros(d), np.ones(d))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {"dtype": a.dtype.str, "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


def _encode(value):
    if isinstance(value, np.ndarray):
        return {"__array__": encode_array(value)}
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, dict):
        return {str(k): _encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    return value


def _decode(value):
    if isinstance(value, dict):
        if set(value) == {"__array__"}:
            return decode_array(value["__array__"])
        return {k: _decode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


class TrainedModel:
    """Base class for fitted classifiers and regressors."""

    kind: str = "abstract"

    def __init__(self, classes: np.ndarray, schema_digest: str | None = None, hyperparams: dict | None = None):
        self.classes = np.asarray(classes)
        self.schema_digest = schema_digest
        self.hyperparams = dict(hyperparams or {})

    @property
    def n_features(self) -> int:
        raise NotImplementedError

    def _proba(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def check_input(self, X, schema_digest: str | None = None) -> np.ndarray:
        if schema_digest is not None and self.schema_digest is not None and schema_digest != self.schema_digest:
            raise SchemaMismatch(f"model schema {self.schema_digest} != input schema {schema_digest}")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise SchemaMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        return X

    def predict_proba(self, X, schema_digest: str | None = None) -> np.ndarray:
        return self._proba(self.check_input(X, schema_digest))

    def predict(self, X, schema_digest: str | None = None) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(X, schema_digest), axis=1)]

    # -- serialization ---------------------------------------------------

    def get_params(self) -> dict[str, Any]:
        raise NotImplementedError

    @classmethod
    def from_params(cls, params: dict, classes, schema_digest, hyperparams) -> "TrainedModel":
        raise NotImplementedError

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "version": MODEL_VERSION,
            "schema_digest": self.schema_digest,
            "params": _encode({
                "classes": self.classes,
                "hyperparams": self.hyperparams,
                "fitted": self.get_params(),
            }),
        }
        return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> TrainedModel:
    doc = json.loads(text)
    if doc.get("version") != MODEL_VERSION:
        raise ModelError(f"unsupported model version {doc.get('version')!r}")
    kind = doc.get("kind")
    if kind not in _REGISTRY:
        raise ModelError(f"unknown model kind {kind!r}")
    params = _decode(doc["params"])
    return _REGISTRY[kind].from_params(params["fitted"], params["classes"], doc["schema_digest"], params["hyperparams"])


def train(learner: Learner, X, y, seed: int = 0, schema_digest: str | None = None) -> TrainedModel:
    """Fit ``learner`` on ``(X, y)``; the same seed always yields the same model."""
    cls = _REGISTRY[learner.kind]
    return cls.fit(X, y, seed=seed, schema_digest=schema_digest, **learner.params)


def predict_proba(model: TrainedModel, X, schema_digest: str | None = None) -> np.ndarray:
    return model.predict_proba(X, schema_digest)


def encode_labels(y) -> tuple[np.ndarray, np.ndarray]:
    classes, codes = np.unique(np.asarray(y), return_inverse=True)
    return classes, codes.astype(np.int64)
