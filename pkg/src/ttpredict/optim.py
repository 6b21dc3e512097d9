"""Full-batch first-order update rules shared by the trained models.

Both rules consume the exact batch gradient every epoch; neither samples
data, so a run is fully determined by the initial parameters.
"""

import numpy as np

from .errors import ConfigError, DivergenceError

OPTIMIZERS = ("adam", "momentum")


class Optimizer:
    """In-place updater for a list of parameter arrays.

    ``momentum`` is heavy-ball gradient descent (``beta1 = 0`` gives the
    plain rule ``p -= lr * g``); ``adam`` rescales each coordinate by a
    running RMS of its gradient, which keeps deep sigmoid stacks moving.
    """

    def __init__(self, params, kind="adam", learning_rate=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        if kind not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {kind!r}")
        self.params = params
        self.kind = kind
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params] if kind == "adam" else None
        self.t = 0

    def step(self, grads):
        self.t += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            m = self.m[i]
            if self.kind == "momentum":
                m *= self.beta1
                m -= self.lr * g
                p += m
            else:
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v = self.v[i]
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                m_hat = m / (1.0 - self.beta1 ** self.t)
                v_hat = v / (1.0 - self.beta2 ** self.t)
                p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def descend(params, grad_fn, kind, learning_rate, epochs, beta1, what):
    """Run `epochs` full-batch updates; returns the loss seen before each update."""
    opt = Optimizer(params, kind, learning_rate, beta1)
    losses = []
    for epoch in range(epochs):
        # overflow shows up as a non-finite loss below; no need for warnings too
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = grad_fn()
        if not np.isfinite(loss):
            raise DivergenceError(f"{what} training loss is not finite", epoch)
        losses.append(loss)
        opt.step(grads)
        for p in params:
            if not np.all(np.isfinite(p)):
                raise DivergenceError(f"{what} parameters became non-finite", epoch)
    return losses
