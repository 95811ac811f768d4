"""Joint next-app and engagement-level prediction: sequential, stacking and boosting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import DomainError
from ..features import InstanceMatrix
from ..learners import Learner, ResidualRegressor, TrainedModel, fit_residual, model_from_json, train
from .engagement import N_LEVELS, EngagementModelBank, train_engagement_bank
from .hybrid import HybridNextAppModel, full_proba, train_category_model, train_hybrid

STRATEGIES = ("sequential", "stacking", "boosting")
GAMMA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))
BUNDLE_VERSION = 1


@dataclass
class JointPredictions:
    categories: np.ndarray
    apps: np.ndarray
    levels: np.ndarray
    first_categories: np.ndarray  # h1 / argmax P_g before any correction
    scores: np.ndarray | None = None  # boosting score vectors, (n, C + 3)

    def pairs(self) -> list[tuple[str, int]]:
        return list(zip(self.apps.tolist(), self.levels.tolist()))


def one_hot(idx: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(idx), width))
    out[np.arange(len(idx)), np.asarray(idx, dtype=int)] = 1.0
    return out


def first_learner_vectors(categories: np.ndarray, n_categories: int) -> np.ndarray:
    """h1 output embedded in the joint label space: onehot_C(category) followed by three zeros."""
    return np.hstack([one_hot(categories, n_categories), np.zeros((len(categories), N_LEVELS))])


def pseudo_residuals(Y: np.ndarray, h1_categories: np.ndarray, n_categories: int) -> np.ndarray:
    return Y - first_learner_vectors(h1_categories, n_categories)


def boosted_scores(h1_categories: np.ndarray, h2_out: np.ndarray, gamma: float, n_categories: int) -> np.ndarray:
    return first_learner_vectors(h1_categories, n_categories) + gamma * np.asarray(h2_out)


def decode_scores(S: np.ndarray, n_categories: int, tol: float = 1e-12):
    """Category and level argmax of each score vector; the mask flags rows whose level block is flat."""
    cats = np.argmax(S[:, :n_categories], axis=1)
    lv = S[:, n_categories:]
    levels = np.argmax(lv, axis=1)
    flat = (lv.max(axis=1) - lv.min(axis=1)) <= tol
    return cats, levels, flat


def search_gamma(Y: np.ndarray, H1: np.ndarray, H2: np.ndarray, grid=GAMMA_GRID) -> tuple[float, dict]:
    """Grid search for the step size minimizing the squared loss of H1 + gamma * H2."""
    losses = {float(g): float(np.sum((Y - H1 - g * H2) ** 2)) for g in grid}
    best = min(losses, key=lambda g: (losses[g], g))
    return best, losses


def h2_features(M: InstanceMatrix, h1_categories: np.ndarray, category_proba: np.ndarray | None, mode: str) -> np.ndarray:
    """Engagement features for the first learner's category, plus its one-hot (or its probabilities)."""
    E = M.engagement(h1_categories)
    if mode == "onehot":
        extra = one_hot(h1_categories, M.n_categories)
    elif mode == "proba":
        extra = category_proba
    else:
        raise DomainError(f"unknown h2 input mode {mode!r}")
    return np.hstack([E, extra])


META_FLOOR = 1e-6
RESIDUAL_FOREST = {"n_trees": 100, "max_depth": 16, "min_samples_leaf": 10, "max_features": 0.33}


def meta_features(pg: np.ndarray, pl: np.ndarray, mode: str = "log") -> np.ndarray:
    """Level-1 input for stacking: category and level probabilities, raw or as log-probabilities.

    On the log scale a linear joint score can express log P(c) + log P(l) exactly.
    """
    Z = np.hstack([pg, pl])
    if mode == "log":
        return np.log(np.clip(Z, META_FLOOR, None))
    if mode == "proba":
        return Z
    raise DomainError(f"unknown meta input mode {mode!r}")


@dataclass
class JointConfig:
    generic_learner: Learner = field(default_factory=lambda: Learner("random_forest"))
    personal_learner: Learner = field(default_factory=lambda: Learner("linear_svm"))
    engagement_learner: Learner = field(default_factory=lambda: Learner("logreg"))
    meta_learner: Learner = field(default_factory=lambda: Learner("logreg"))
    min_personal: int = 20
    min_support: int = 50
    folds: int = 5
    ridge_lambda: float = 1.0
    residual_kind: str = "forest"  # forest | ridge
    residual_params: dict = field(default_factory=lambda: dict(RESIDUAL_FOREST))
    h2_input: str = "onehot"
    meta_input: str = "proba"  # proba | log
    h1_fit: str = "oof"  # oof | in_sample
    seed: int = 0


@dataclass
class JointModel:
    strategy: str
    hybrid: HybridNextAppModel
    bank: EngagementModelBank
    meta: TrainedModel | None = None
    residual: ResidualRegressor | None = None
    gamma: float | None = None
    h2_input: str = "onehot"
    meta_input: str = "proba"
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise DomainError(f"unknown strategy {self.strategy!r}")

    @property
    def n_categories(self) -> int:
        return self.hybrid.n_categories

    def predict(self, M: InstanceMatrix) -> JointPredictions:
        c = self.n_categories
        pg = self.hybrid.category_proba(M.X_generic)
        h1 = np.argmax(pg, axis=1)
        scores = None
        if self.strategy == "sequential":
            cats = h1
            levels = self.bank.predict(M.engagement(cats), cats)
        elif self.strategy == "stacking":
            Z = meta_features(pg, self.bank.proba(M.engagement(h1), h1), self.meta_input)
            joint = self.meta.predict(Z).astype(int)
            cats, levels = joint // N_LEVELS, joint % N_LEVELS
        else:
            X2 = h2_features(M, h1, pg, self.h2_input)
            scores = boosted_scores(h1, self.residual.predict(X2), self.gamma, c)
            cats, levels, flat = decode_scores(scores, c)
            if flat.any():
                idx = np.flatnonzero(flat)
                levels = levels.copy()
                levels[idx] = self.bank.predict(M.engagement(cats)[idx], cats[idx])
        apps = self.hybrid.apps_within(M.users, [i.x_personal for i in M.instances], cats)
        return JointPredictions(np.asarray(cats), apps, np.asarray(levels), h1, scores)


def _fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    if folds < 2:
        raise DomainError("need at least two folds")
    ids = np.empty(n, dtype=int)
    perm = np.random.default_rng(seed).permutation(n)
    for k, part in enumerate(np.array_split(perm, folds)):
        ids[part] = k
    return ids


def out_of_fold(M: InstanceMatrix, cfg: JointConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Out-of-fold category probabilities, first-learner categories and level probabilities."""
    c = M.n_categories
    n = len(M)
    ids = _fold_ids(n, cfg.folds, cfg.seed)
    pg = np.zeros((n, c))
    pl = np.zeros((n, N_LEVELS))
    for k in range(cfg.folds):
        tr, te = np.flatnonzero(ids != k), np.flatnonzero(ids == k)
        sub = M.subset(tr)
        if np.unique(sub.categories).size < 2:
            raise DomainError(f"fold {k} has a single category")
        cat_model = train_category_model(sub, cfg.generic_learner, cfg.seed + 1 + k)
        bank = train_engagement_bank(sub.engagement(), sub.categories, sub.levels, cfg.engagement_learner,
                                     cfg.min_support, cfg.seed + 1 + k)
        held = M.subset(te)
        pg[te] = full_proba(cat_model, held.X_generic, c)
        h = np.argmax(pg[te], axis=1)
        pl[te] = bank.proba(held.engagement(h), h)
    return pg, np.argmax(pg, axis=1), pl


def train_stacking(hybrid, bank, M: InstanceMatrix, cfg: JointConfig, oof=None) -> JointModel:
    pg, _, pl = oof if oof is not None else out_of_fold(M, cfg)
    joint = M.categories * N_LEVELS + M.levels
    meta = train(cfg.meta_learner, meta_features(pg, pl, cfg.meta_input), joint, seed=cfg.seed)
    diag = {"joint_classes": int(np.unique(joint).size), "folds": cfg.folds}
    return JointModel("stacking", hybrid, bank, meta=meta, meta_input=cfg.meta_input, diagnostics=diag)


def train_boosting(hybrid, bank, M: InstanceMatrix, cfg: JointConfig, oof=None) -> JointModel:
    c = M.n_categories
    if cfg.h1_fit == "oof":
        pg, h1, _ = oof if oof is not None else out_of_fold(M, cfg)
    elif cfg.h1_fit == "in_sample":
        pg = hybrid.category_proba(M.X_generic)
        h1 = np.argmax(pg, axis=1)
    else:
        raise DomainError(f"unknown h1_fit {cfg.h1_fit!r}")
    Y = M.joint_labels()
    H1 = first_learner_vectors(h1, c)
    if H1.shape != Y.shape:
        raise DomainError("first learner output and residual space differ in dimension")
    R = Y - H1
    X2 = h2_features(M, h1, pg, cfg.h2_input)
    residual = fit_residual(X2, R, lam=cfg.ridge_lambda, kind=cfg.residual_kind, seed=cfg.seed,
                            **cfg.residual_params)
    gamma, losses = search_gamma(Y, H1, residual.predict(X2))
    diag = {"gamma_losses": losses, "h1_train_accuracy": float(np.mean(h1 == M.categories)), "h1_fit": cfg.h1_fit}
    return JointModel("boosting", hybrid, bank, residual=residual, gamma=gamma, h2_input=cfg.h2_input,
                      diagnostics=diag)


def train_components(M: InstanceMatrix, cfg: JointConfig) -> tuple[HybridNextAppModel, EngagementModelBank]:
    hybrid = train_hybrid(M, cfg.generic_learner, cfg.personal_learner, cfg.min_personal, cfg.seed)
    bank = train_engagement_bank(M.engagement(), M.categories, M.levels, cfg.engagement_learner,
                                 cfg.min_support, cfg.seed)
    return hybrid, bank


def train_joint(M: InstanceMatrix, strategies=STRATEGIES, cfg: JointConfig | None = None) -> dict[str, JointModel]:
    """Train the shared components once and the requested strategies on top of them."""
    cfg = cfg or JointConfig()
    hybrid, bank = train_components(M, cfg)
    need_oof = "stacking" in strategies or ("boosting" in strategies and cfg.h1_fit == "oof")
    oof = out_of_fold(M, cfg) if need_oof else None
    out = {}
    for s in strategies:
        if s == "sequential":
            out[s] = JointModel("sequential", hybrid, bank)
        elif s == "stacking":
            out[s] = train_stacking(hybrid, bank, M, cfg, oof)
        elif s == "boosting":
            out[s] = train_boosting(hybrid, bank, M, cfg, oof)
        else:
            raise DomainError(f"unknown strategy {s!r}")
    return out


# -- bundle persistence ------------------------------------------------------

def save_bundle(model: JointModel, directory: str | Path, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {"hybrid": "hybrid.json", "bank": "bank.json"}
    (d / "hybrid.json").write_text(json.dumps(model.hybrid.to_dict(), sort_keys=True))
    (d / "bank.json").write_text(json.dumps(model.bank.to_dict(), sort_keys=True))
    if model.meta is not None:
        files["meta"] = "meta.json"
        (d / "meta.json").write_text(model.meta.to_json())
    if model.residual is not None:
        files["residual"] = "residual.json"
        (d / "residual.json").write_text(model.residual.to_json())
    manifest = {
        "version": BUNDLE_VERSION,
        "strategy": model.strategy,
        "gamma": model.gamma,
        "h2_input": model.h2_input,
        "meta_input": model.meta_input,
        "files": files,
        "diagnostics": model.diagnostics,
        **(extra or {}),
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_bundle(directory: str | Path) -> tuple[JointModel, dict]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("version") != BUNDLE_VERSION:
        raise DomainError(f"unsupported bundle version {manifest.get('version')!r}")
    files = manifest["files"]
    hybrid = HybridNextAppModel.from_dict(json.loads((d / files["hybrid"]).read_text()))
    bank = EngagementModelBank.from_dict(json.loads((d / files["bank"]).read_text()))
    meta = model_from_json((d / files["meta"]).read_text()) if "meta" in files else None
    residual = ResidualRegressor.from_json((d / files["residual"]).read_text()) if "residual" in files else None
    model = JointModel(manifest["strategy"], hybrid, bank, meta, residual, manifest["gamma"],
                       manifest.get("h2_input", "onehot"), manifest.get("meta_input", "proba"),
                       manifest.get("diagnostics", {}))
    return model, manifest
