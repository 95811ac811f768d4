"""k-nearest-neighbour classifier on standardized Euclidean distance."""

from __future__ import annotations

import numpy as np

from .base import Standardizer, TrainedModel, canonical_order, check_xy, encode_labels, register


@register("knn")
class KNearestNeighbors(TrainedModel):
    def __init__(self, X, codes, scaler: Standardizer, k: int, classes, schema_digest=None, hyperparams=None):
        super().__init__(classes, schema_digest, hyperparams)
        self.X = np.asarray(X, dtype=float)
        self.codes = np.asarray(codes, dtype=np.int64)
        self.scaler = scaler
        self.k = int(k)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @classmethod
    def fit(cls, X, y, seed=0, schema_digest=None, k=15, standardize=True):
        X, y = check_xy(X, y)
        order = canonical_order(X, y)
        X, y = X[order], np.asarray(y)[order]
        classes, codes = encode_labels(y)
        scaler = Standardizer.fit(X) if standardize else Standardizer.identity(X.shape[1])
        return cls(scaler.transform(X), codes, scaler, min(k, X.shape[0]), classes, schema_digest,
                   dict(k=k, standardize=standardize))

    def _proba(self, X, chunk: int = 1024):
        Q = self.scaler.transform(X)
        out = np.zeros((Q.shape[0], self.classes.size))
        sq = np.sum(self.X ** 2, axis=1)
        for s in range(0, Q.shape[0], chunk):
            q = Q[s:s + chunk]
            d2 = np.maximum(np.sum(q ** 2, axis=1)[:, None] - 2 * q @ self.X.T + sq[None, :], 0.0)
            # Stable sort keeps the lower training index on distance ties.
            nn = np.argsort(d2, axis=1, kind="stable")[:, :self.k]
            votes = self.codes[nn]
            for c in range(self.classes.size):
                out[s:s + chunk, c] = np.sum(votes == c, axis=1)
        return out / self.k

    def get_params(self):
        return {"X": self.X, "codes": self.codes, "mean": self.scaler.mean, "scale": self.scaler.scale, "k": self.k}

    @classmethod
    def from_params(cls, p, classes, schema_digest, hyperparams):
        return cls(p["X"], p["codes"], Standardizer(p["mean"], p["scale"]), p["k"], classes, schema_digest, hyperparams)
