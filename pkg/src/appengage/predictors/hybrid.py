"""Hybrid next-app model: a population category model times a per-user app model."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..core import DomainError
from ..features import InstanceMatrix
from ..learners import Learner, TrainedModel, model_from_json, train

NO_APP = "<none>"


def full_proba(model: TrainedModel, X: np.ndarray, n_classes: int) -> np.ndarray:
    """Spread a model's probabilities over all ``n_classes`` integer labels."""
    P = model.predict_proba(X)
    out = np.zeros((P.shape[0], n_classes))
    out[:, model.classes.astype(int)] = P
    return out


def _ranked(counter: Counter) -> list[str]:
    return [a for a, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))]


@dataclass
class PersonalModel:
    """Per-user app scorer: a trained classifier over the user's apps, or frequency shares."""

    user_id: str
    app_categories: dict[str, int]
    frequencies: dict[str, int]
    model: TrainedModel | None = None

    def scores(self, X: np.ndarray) -> tuple[list[str], np.ndarray]:
        """Return the app list and an (n, n_apps) matrix of P_p values."""
        apps = sorted(self.frequencies)
        if self.model is None:
            total = sum(self.frequencies.values())
            row = np.array([self.frequencies[a] / total for a in apps])
            return apps, np.tile(row, (X.shape[0], 1))
        P = self.model.predict_proba(X)
        pos = {a: i for i, a in enumerate(apps)}
        out = np.zeros((X.shape[0], len(apps)))
        for j, a in enumerate(self.model.classes):
            out[:, pos[str(a)]] = P[:, j]
        return apps, out


@dataclass
class HybridNextAppModel:
    category_model: TrainedModel
    personal: dict[str, PersonalModel]
    global_by_category: dict[int, list[str]]  # apps ranked by training frequency
    n_categories: int
    min_personal: int = 20
    flags: list[str] = field(default_factory=list)

    def category_proba(self, X_generic: np.ndarray) -> np.ndarray:
        return full_proba(self.category_model, X_generic, self.n_categories)

    def fallback_app(self, user: str, category: int) -> str:
        pm = self.personal.get(user)
        if pm is not None:
            own = Counter({a: n for a, n in pm.frequencies.items() if pm.app_categories[a] == category})
            if own:
                return _ranked(own)[0]
        ranked = self.global_by_category.get(category)
        return ranked[0] if ranked else NO_APP

    def apps_within(self, users: np.ndarray, X_personal: list[np.ndarray], categories: np.ndarray) -> np.ndarray:
        """Best app per item restricted to the given category, by P_p with frequency fallbacks."""
        out = np.empty(len(users), dtype=object)
        by_user: dict[str, list[int]] = {}
        for i, u in enumerate(users):
            by_user.setdefault(str(u), []).append(i)
        for u, idx in by_user.items():
            pm = self.personal.get(u)
            if pm is None:
                for i in idx:
                    out[i] = self.fallback_app(u, int(categories[i]))
                continue
            apps, S = pm.scores(np.vstack([X_personal[i] for i in idx]))
            cats = np.array([pm.app_categories[a] for a in apps])
            for row, i in enumerate(idx):
                mask = cats == categories[i]
                if not mask.any():
                    out[i] = self.fallback_app(u, int(categories[i]))
                    continue
                s = np.where(mask, S[row], -np.inf)
                # Ties resolve to the first app in sorted order.
                out[i] = apps[int(np.argmax(s))]
        return out

    def ranked(self, user: str, x_generic: np.ndarray, x_personal: np.ndarray) -> list[tuple[str, int, float]]:
        """All of the user's apps scored by P_g(category) * P_p(app), best first."""
        pg = self.category_proba(x_generic[None, :])[0]
        pm = self.personal.get(user)
        if pm is None:
            out = []
            for c, apps in self.global_by_category.items():
                if apps:
                    out.append((apps[0], c, float(pg[c])))
        else:
            apps, S = pm.scores(x_personal[None, :])
            out = [(a, pm.app_categories[a], float(pg[pm.app_categories[a]] * S[0, j])) for j, a in enumerate(apps)]
        return sorted(out, key=lambda t: (-t[2], t[0]))

    def predict_next(self, user: str, x_generic: np.ndarray, x_personal: np.ndarray) -> tuple[str, int, float]:
        """Top-1 under the category restriction: argmax P_g category, then best app inside it."""
        pg = self.category_proba(x_generic[None, :])[0]
        c = int(np.argmax(pg))
        app = self.apps_within(np.array([user]), [x_personal], np.array([c]))[0]
        return app, c, float(pg[c])

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "category_model": self.category_model.to_json(),
            "personal": {
                u: {
                    "app_categories": pm.app_categories,
                    "frequencies": pm.frequencies,
                    "model": pm.model.to_json() if pm.model is not None else None,
                } for u, pm in sorted(self.personal.items())
            },
            "global_by_category": {str(c): v for c, v in sorted(self.global_by_category.items())},
            "n_categories": self.n_categories,
            "min_personal": self.min_personal,
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HybridNextAppModel":
        personal = {
            u: PersonalModel(u, {a: int(c) for a, c in p["app_categories"].items()}, dict(p["frequencies"]),
                             model_from_json(p["model"]) if p["model"] else None)
            for u, p in d["personal"].items()
        }
        return cls(model_from_json(d["category_model"]), personal,
                   {int(c): list(v) for c, v in d["global_by_category"].items()},
                   int(d["n_categories"]), int(d["min_personal"]), list(d.get("flags", [])))


def train_category_model(M: InstanceMatrix, learner: Learner, seed: int, schema_digest: str | None = None):
    if np.unique(M.categories).size < 2:
        raise DomainError("need at least two categories in the training labels")
    return train(learner, M.X_generic, M.categories, seed=seed, schema_digest=schema_digest)


def train_hybrid(
    M: InstanceMatrix,
    generic_learner: Learner = Learner("random_forest"),
    personal_learner: Learner = Learner("linear_svm"),
    min_personal: int = 20,
    seed: int = 0,
    schema_digest: str | None = None,
    category_model: TrainedModel | None = None,
) -> HybridNextAppModel:
    if len(M) < 2:
        raise DomainError("too few instances to train the hybrid model")
    cat_model = category_model or train_category_model(M, generic_learner, seed, schema_digest)
    glob: dict[int, Counter] = {}
    by_user: dict[str, list[int]] = {}
    for i, inst in enumerate(M.instances):
        glob.setdefault(inst.label_category, Counter())[inst.record.app_id] += 1
        by_user.setdefault(inst.user_id, []).append(i)
    personal, flags = {}, []
    for u in sorted(by_user):
        idx = by_user[u]
        apps = [M.instances[i].record.app_id for i in idx]
        freq = Counter(apps)
        cats = {M.instances[i].record.app_id: M.instances[i].label_category for i in idx}
        model = None
        if len(idx) >= min_personal and len(freq) >= 2:
            Xp = np.vstack([M.instances[i].x_personal for i in idx])
            model = train(personal_learner, Xp, np.array(apps), seed=seed)
        elif len(idx) < min_personal:
            flags.append(f"user {u}: {len(idx)} training instances, frequency fallback")
        personal[u] = PersonalModel(u, dict(sorted(cats.items())), dict(sorted(freq.items())), model)
    global_ranked = {c: _ranked(cnt) for c, cnt in sorted(glob.items())}
    return HybridNextAppModel(cat_model, personal, global_ranked, M.n_categories, min_personal, flags)
