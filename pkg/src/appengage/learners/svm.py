"""One-vs-rest linear SVM (L2-regularized hinge loss) with softmax-calibrated margins."""

from __future__ import annotations

import numpy as np

from .base import Standardizer, TrainedModel, canonical_order, check_xy, encode_labels, register
from .logreg import softmax
from .optim import minibatch_descent


def hinge_loss_grad(W, b, X, S, lam):
    """Mean one-vs-rest hinge loss; ``S`` holds +1/-1 targets per class column."""
    n = X.shape[0]
    M = S * (X @ W + b)
    active = (M < 1).astype(float)
    loss = float(np.sum(np.maximum(0.0, 1 - M)) / n) + lam * float(np.sum(W * W))
    G = -(active * S) / n
    return loss, X.T @ G + 2 * lam * W, G.sum(axis=0)


@register("linear_svm")
class LinearSVM(TrainedModel):
    def __init__(self, W, b, scaler: Standardizer, classes, schema_digest=None, hyperparams=None):
        super().__init__(classes, schema_digest, hyperparams)
        self.W = np.asarray(W, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.scaler = scaler

    @property
    def n_features(self) -> int:
        return self.W.shape[0]

    @classmethod
    def fit(cls, X, y, seed=0, schema_digest=None, lam=1e-4, epochs=30, batch_size=64,
            learning_rate=0.01, standardize=True, decay=0.5):
        X, y = check_xy(X, y)
        order = canonical_order(X, y)
        X, y = X[order], np.asarray(y)[order]
        classes, codes = encode_labels(y)
        scaler = Standardizer.fit(X) if standardize else Standardizer.identity(X.shape[1])
        Xs = scaler.transform(X)
        S = np.where(np.eye(classes.size)[codes] > 0, 1.0, -1.0)
        W = np.zeros((X.shape[1], classes.size))
        b = np.zeros(classes.size)

        def lg(params, Xb, Sb):
            loss, dW, db = hinge_loss_grad(params[0], params[1], Xb, Sb, lam)
            return loss, [dW, db]

        minibatch_descent([W, b], lg, Xs, S, epochs=epochs, batch_size=batch_size, lr=learning_rate, seed=seed,
                          decay=decay)
        hp = dict(lam=lam, epochs=epochs, batch_size=batch_size, learning_rate=learning_rate, standardize=standardize,
                  decay=decay)
        return cls(W, b, scaler, classes, schema_digest, hp)

    def decision_function(self, X) -> np.ndarray:
        X = self.check_input(X)
        return self.scaler.transform(X) @ self.W + self.b

    def _proba(self, X):
        return softmax(self.scaler.transform(X) @ self.W + self.b)

    def get_params(self):
        return {"W": self.W, "b": self.b, "mean": self.scaler.mean, "scale": self.scaler.scale}

    @classmethod
    def from_params(cls, p, classes, schema_digest, hyperparams):
        return cls(p["W"], p["b"], Standardizer(p["mean"], p["scale"]), classes, schema_digest, hyperparams)
