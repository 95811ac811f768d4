"""Mini-batch Adam loop shared by the linear learners."""

from __future__ import annotations

from typing import Callable

import numpy as np


class Adam:
    def __init__(self, shapes, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        b1t = 1 - self.beta1 ** self.t
        b2t = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def minibatch_descent(
    params: list[np.ndarray],
    loss_grad: Callable,
    X: np.ndarray,
    Y: np.ndarray,
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    decay: float = 0.0,
) -> list[float]:
    """Run Adam over shuffled mini-batches; ``loss_grad(params, Xb, Yb)`` returns (loss, grads).

    With ``decay > 0`` the step size of epoch e is lr / (1 + decay * e), which
    damps the mini-batch noise in the final iterate. Returns the mean batch loss
    per epoch.
    """
    rng = np.random.default_rng(seed)
    opt = Adam([p.shape for p in params], lr=lr)
    n = X.shape[0]
    history = []
    for epoch in range(epochs):
        opt.lr = lr / (1.0 + decay * epoch)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grads = loss_grad(params, X[idx], Y[idx])
            opt.step(params, grads)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history
