"""One engagement-level classifier per app category, with a global fallback."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import DomainError
from ..learners import Learner, TrainedModel, model_from_json, train
from .hybrid import full_proba

N_LEVELS = 3


@dataclass
class ConstantLevel:
    """Stands in for a classifier when a category shows a single level in training."""

    level: int

    def proba(self, n: int) -> np.ndarray:
        P = np.zeros((n, N_LEVELS))
        P[:, self.level] = 1.0
        return P


@dataclass
class EngagementModelBank:
    models: dict[int, TrainedModel | ConstantLevel]
    fallback: TrainedModel | ConstantLevel
    min_support: int = 50
    flags: list[str] = field(default_factory=list)

    def model_for(self, category: int):
        return self.models.get(int(category), self.fallback)

    def routed_to_fallback(self, category: int) -> bool:
        return int(category) not in self.models

    def proba(self, E: np.ndarray, categories: np.ndarray) -> np.ndarray:
        """Level probabilities for engagement rows built with the given predicted categories."""
        E = np.asarray(E, dtype=float)
        categories = np.asarray(categories)
        out = np.zeros((E.shape[0], N_LEVELS))
        keys = np.array([c if c in self.models else -1 for c in categories.tolist()])
        for key in np.unique(keys):
            idx = np.flatnonzero(keys == key)
            model = self.fallback if key == -1 else self.models[int(key)]
            if isinstance(model, ConstantLevel):
                out[idx] = model.proba(idx.size)
            else:
                out[idx] = full_proba(model, E[idx], N_LEVELS)
        return out

    def predict(self, E: np.ndarray, categories: np.ndarray) -> np.ndarray:
        return np.argmax(self.proba(E, categories), axis=1)

    def to_dict(self) -> dict:
        def enc(m):
            return {"constant": m.level} if isinstance(m, ConstantLevel) else {"model": m.to_json()}
        return {
            "models": {str(c): enc(m) for c, m in sorted(self.models.items())},
            "fallback": enc(self.fallback),
            "min_support": self.min_support,
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EngagementModelBank":
        def dec(e):
            return ConstantLevel(int(e["constant"])) if "constant" in e else model_from_json(e["model"])
        return cls({int(c): dec(e) for c, e in d["models"].items()}, dec(d["fallback"]),
                   int(d["min_support"]), list(d.get("flags", [])))


def _fit_levels(learner: Learner, E, y, seed, schema_digest):
    levels = np.unique(y)
    if levels.size == 1:
        return ConstantLevel(int(levels[0]))
    return train(learner, E, y, seed=seed, schema_digest=schema_digest)


def train_engagement_bank(
    E: np.ndarray,
    categories: np.ndarray,
    levels: np.ndarray,
    learner: Learner = Learner("logreg"),
    min_support: int = 50,
    seed: int = 0,
    schema_digest: str | None = None,
) -> EngagementModelBank:
    """Fit one 3-level model for every category with at least ``min_support`` instances.

    ``E`` rows are engagement features built with the true category as the
    predicted category.
    """
    E = np.asarray(E, dtype=float)
    categories = np.asarray(categories)
    levels = np.asarray(levels)
    if E.shape[0] == 0:
        raise DomainError("no instances to train the engagement bank")
    models, flags = {}, []
    for c in np.unique(categories).tolist():
        idx = np.flatnonzero(categories == c)
        if idx.size < min_support:
            flags.append(f"category {c}: {idx.size} instances < {min_support}, using fallback")
            continue
        m = _fit_levels(learner, E[idx], levels[idx], seed, schema_digest)
        if isinstance(m, ConstantLevel):
            flags.append(f"category {c}: single level {m.level} in training, constant predictor")
        models[int(c)] = m
    fallback = _fit_levels(learner, E, levels, seed, schema_digest)
    return EngagementModelBank(models, fallback, min_support, flags)
