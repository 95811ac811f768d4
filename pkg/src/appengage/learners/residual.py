"""Multi-output regressors used as the residual learner in boosting.

The default is closed-form ridge on centered inputs (intercept unpenalized);
a bagged regression-tree ensemble is available for residual structure that
depends on feature interactions.
"""

from __future__ import annotations

import json

import numpy as np

from .base import MODEL_VERSION, ModelError, _decode, _encode, canonical_order, check_xy
from .forest import fit_forest_arrays, predict_forest_arrays

RESIDUAL_KINDS = ("ridge", "forest")


class ResidualRegressor:
    def __init__(self, kind: str, params: dict, n_features: int, n_outputs: int, schema_digest: str | None = None):
        if kind not in RESIDUAL_KINDS:
            raise ModelError(f"unknown residual regressor kind {kind!r}")
        self.kind = kind
        self.params = params
        self._n_features = int(n_features)
        self._n_outputs = int(n_outputs)
        self.schema_digest = schema_digest

    @property
    def n_features(self) -> int:
        return self._n_features

    @property
    def n_outputs(self) -> int:
        return self._n_outputs

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ModelError(f"residual model expects {self.n_features} features, got {X.shape[1]}")
        if self.kind == "ridge":
            return X @ self.params["W"] + self.params["b"]
        p = self.params
        cuts = [p["cuts"][p["cut_offsets"][i]:p["cut_offsets"][i + 1]] for i in range(self.n_features)]
        return predict_forest_arrays(X, cuts, p["trees"])

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind, "version": MODEL_VERSION, "schema_digest": self.schema_digest,
            "params": _encode({"fitted": self.params, "n_features": self.n_features, "n_outputs": self.n_outputs}),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ResidualRegressor":
        doc = json.loads(text)
        if doc.get("kind") not in RESIDUAL_KINDS or doc.get("version") != MODEL_VERSION:
            raise ModelError("not a residual regressor document")
        p = _decode(doc["params"])
        return cls(doc["kind"], p["fitted"], p["n_features"], p["n_outputs"], doc["schema_digest"])


def fit_residual(X, R, lam: float = 1.0, kind: str = "ridge", seed: int = 0, schema_digest: str | None = None,
                 **forest_params) -> ResidualRegressor:
    """Least-squares fit of every residual column on ``X``."""
    X = check_xy(X)
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != X.shape[0]:
        raise ModelError(f"residual targets of shape {R.shape} do not match {X.shape[0]} rows")
    order = canonical_order(np.hstack([X, R]))
    X, R = X[order], R[order]
    d, m = X.shape[1], R.shape[1]
    if kind == "ridge":
        mx, mr = X.mean(axis=0), R.mean(axis=0)
        Xc, Rc = X - mx, R - mr
        if lam > 0:
            W = np.linalg.solve(Xc.T @ Xc + lam * np.eye(d), Xc.T @ Rc)
        else:
            W = np.linalg.lstsq(Xc, Rc, rcond=None)[0]
        return ResidualRegressor("ridge", {"W": W, "b": mr - mx @ W, "lam": float(lam)}, d, m, schema_digest)
    if kind == "forest":
        cuts, trees = fit_forest_arrays(X, R, seed=seed, **forest_params)
        flat = np.concatenate(cuts) if cuts else np.zeros(0)
        offsets = np.concatenate([[0], np.cumsum([c.size for c in cuts])]).astype(np.int64)
        params = {"cuts": flat, "cut_offsets": offsets, "trees": trees, "forest": dict(forest_params)}
        return ResidualRegressor("forest", params, d, m, schema_digest)
    raise ModelError(f"unknown residual regressor kind {kind!r}")


def predict_residual(reg: ResidualRegressor, x) -> np.ndarray:
    return reg.predict(x)
