"""Multinomial logistic regression with an L2 penalty, trained by mini-batch Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import ModelError, Standardizer, TrainedModel, canonical_order, check_xy, encode_labels, register
from .optim import minibatch_descent


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def logreg_loss_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray, lam: float):
    """Mean cross-entropy plus ``lam * ||W||^2`` (bias unpenalized).

    Args:
        W: (d, k) weights.
        b: (k,) intercepts.
        X: (n, d) inputs.
        Y: (n, k) one-hot targets.
        lam: L2 strength.

    Returns:
        (loss, dW, db)
    """
    n = X.shape[0]
    reg = lam * float(np.sum(W * W))
    if n == 0:
        return reg, 2 * lam * W, np.zeros_like(b)
    Z = X @ W + b
    Zs = Z - Z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(Zs).sum(axis=1))
    loss = float(np.mean(logsum - np.sum(Y * Zs, axis=1))) + reg
    G = (softmax(Z) - Y) / n
    return loss, X.T @ G + 2 * lam * W, G.sum(axis=0)


def gradient_check(loss_grad, W: np.ndarray, b: np.ndarray, X, Y, lam: float, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The relative error of each coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    _, dW, db = loss_grad(W, b, X, Y, lam)
    analytic = np.concatenate([dW.ravel(), db.ravel()])
    theta = np.concatenate([W.ravel(), b.ravel()])
    numeric = np.empty_like(theta)

    def f(t):
        return loss_grad(t[:W.size].reshape(W.shape), t[W.size:].reshape(b.shape), X, Y, lam)[0]

    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += epsilon
        tm[i] -= epsilon
        numeric[i] = (f(tp) - f(tm)) / (2 * epsilon)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


@register("logreg")
class LogisticRegression(TrainedModel):
    def __init__(self, W, b, scaler: Standardizer, classes, schema_digest=None, hyperparams=None, loss_history=()):
        super().__init__(classes, schema_digest, hyperparams)
        self.W = np.asarray(W, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.scaler = scaler
        self.loss_history = list(loss_history)

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
        Y = np.eye(classes.size)[codes]
        W = np.zeros((X.shape[1], classes.size))
        b = np.zeros(classes.size)

        def lg(params, Xb, Yb):
            loss, dW, db = logreg_loss_grad(params[0], params[1], Xb, Yb, lam)
            return loss, [dW, db]

        hist = minibatch_descent([W, b], lg, Xs, Y, epochs=epochs, batch_size=batch_size, lr=learning_rate, seed=seed,
                          decay=decay)
        hp = dict(lam=lam, epochs=epochs, batch_size=batch_size, learning_rate=learning_rate, standardize=standardize,
                  decay=decay)
        return cls(W, b, scaler, classes, schema_digest, hp, hist)

    def decision_function(self, X) -> np.ndarray:
        X = self.check_input(X)
        return self.scaler.transform(X) @ self.W + self.b

    def _proba(self, X):
        return softmax(self.scaler.transform(X) @ self.W + self.b)

    @property
    def coef_(self) -> np.ndarray:
        """Weights in the original (unstandardized) feature space, shape (d, k)."""
        return self.W / self.scaler.scale[:, None]

    def get_params(self):
        return {"W": self.W, "b": self.b, "mean": self.scaler.mean, "scale": self.scaler.scale,
                "loss_history": self.loss_history}

    @classmethod
    def from_params(cls, p, classes, schema_digest, hyperparams):
        return cls(p["W"], p["b"], Standardizer(p["mean"], p["scale"]), classes, schema_digest, hyperparams,
                   p.get("loss_history", ()))


@dataclass
class CoefficientReport:
    weights: np.ndarray  # (d, k) rescaled coefficients
    zero_variance: np.ndarray  # numeric columns that were constant on X_train
    block_scores: dict  # block name -> largest per-column mean |weight| over classes

    def ranking(self) -> list[tuple[str, float]]:
        return sorted(self.block_scores.items(), key=lambda kv: (-kv[1], kv[0]))


def standardized_coefficients(model: TrainedModel, X_train, numeric_mask=None, block_names=None) -> CoefficientReport:
    """Rescale raw coefficients of numeric features by twice their training std.

    Binary indicator columns keep their raw coefficient so they stay
    comparable with the rescaled numeric ones.
    """
    if not isinstance(model, LogisticRegression):
        raise ModelError("standardized coefficients need a logistic regression model")
    X = np.asarray(X_train, dtype=float)
    d = model.n_features
    if numeric_mask is None:
        numeric_mask = ~np.all(np.isin(X, (0.0, 1.0)), axis=0)
    numeric_mask = np.asarray(numeric_mask, dtype=bool)
    std = X.std(axis=0)
    raw = model.coef_
    zero_var = numeric_mask & (std == 0)
    scale = np.where(numeric_mask, 2 * std, 1.0)
    weights = raw * scale[:, None]
    weights[zero_var] = 0.0
    names = list(block_names) if block_names is not None else [f"f{j}" for j in range(d)]
    scores: dict[str, list[float]] = {}
    for j, name in enumerate(names):
        scores.setdefault(name, []).append(float(np.mean(np.abs(weights[j]))))
    return CoefficientReport(weights, np.flatnonzero(zero_var), {k: max(v) for k, v in scores.items()})
