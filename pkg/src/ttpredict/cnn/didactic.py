"""The 3x3 time-space CNN with a single shared 2x2 filter.

Window layout: ``window[s, t]`` is the travel time of segment ``s + 1``
at time ``j - 2 + t``, so row 0 is segment 1 and column 2 is the current
interval ``j``.

The filter weights w1[0..3] (w1,1 .. w1,4) sit at these
(segment offset, time offset) positions of a 2x2 patch::

    w1,1 (0, 0)   w1,2 (1, 0)   w1,3 (0, 1)   w1,4 (1, 1)

i.e. row-major when the patch is drawn with time down the rows and
segments across. The four hidden units h1..h4 are the patches anchored
at the same four offsets of the 3x3 window. h4 therefore reads
T3,j-1 through w1,2, the same input the w1,2 update rule pairs
with w2,4.

Activations are linear, every conv position has its own bias, and one
SGD step updates all 13 parameters from their pre-step values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..errors import DivergenceError, InvalidArgument
from .layers import conv2d_valid

# (segment offset, time offset) for filter weight m, and for hidden unit k
OFFSETS = ((0, 0), (1, 0), (0, 1), (1, 1))


@dataclass(frozen=True)
class DidacticCnnParams:
    w1: tuple
    b1: tuple
    w2: tuple
    b2: float
    learning_rate: float = 0.01

    def __post_init__(self):
        for name in ("w1", "b1", "w2"):
            v = tuple(float(a) for a in getattr(self, name))
            if len(v) != 4:
                raise InvalidArgument(f"{name} needs 4 entries, got {len(v)}")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "b2", float(self.b2))
        if not all(math.isfinite(a) for a in self.vector()):
            raise InvalidArgument("parameters must be finite")
        if not self.learning_rate > 0:
            raise InvalidArgument("learning rate must be positive")

    @classmethod
    def zeros(cls, learning_rate=0.01):
        return cls((0,) * 4, (0,) * 4, (0,) * 4, 0.0, learning_rate)

    @classmethod
    def random(cls, rng, learning_rate=0.01, scale=0.5):
        v = rng.uniform(-scale, scale, size=13)
        return cls.from_vector(v, learning_rate)

    def vector(self):
        """Parameters flattened as w1, b1, w2, b2 (13 values)."""
        return np.array(self.w1 + self.b1 + self.w2 + (self.b2,))

    @classmethod
    def from_vector(cls, v, learning_rate=0.01):
        v = np.asarray(v, dtype=float)
        if v.shape != (13,):
            raise InvalidArgument("didactic parameter vector has 13 entries")
        return cls(tuple(v[0:4]), tuple(v[4:8]), tuple(v[8:12]), float(v[12]), learning_rate)

    def filter_grid(self):
        """The filter as a 2x2 grid in the window's (segment, time) layout."""
        g = np.zeros((2, 2))
        for m, (ds, dt) in enumerate(OFFSETS):
            g[ds, dt] = self.w1[m]
        return g

    def bias_grid(self):
        """Untied conv biases placed at their output positions."""
        g = np.zeros((2, 2))
        for k, (s, t) in enumerate(OFFSETS):
            g[s, t] = self.b1[k]
        return g


N_PARAMS = 13


def _check_window(window):
    w = np.asarray(window, dtype=float)
    if w.shape != (3, 3):
        raise InvalidArgument(f"didactic window must be 3x3, got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InvalidArgument("window contains non-finite values")
    return w


def patch_matrix(window):
    """P[k, m] = the input multiplied by filter weight m in hidden unit k."""
    w = _check_window(window)
    P = np.empty((4, 4))
    for k, (s, t) in enumerate(OFFSETS):
        for m, (ds, dt) in enumerate(OFFSETS):
            P[k, m] = w[s + ds, t + dt]
    return P


def didactic_forward(window, p: DidacticCnnParams):
    """Returns ``(prediction, h)`` with ``h`` the four hidden activations."""
    P = patch_matrix(window)
    h = P @ np.array(p.w1) + np.array(p.b1)
    pred = float(np.dot(p.w2, h) + p.b2)
    return pred, h


def didactic_forward_conv(window, p: DidacticCnnParams):
    """Same network evaluated through the generic convolution routine."""
    grid = conv2d_valid(_check_window(window), p.filter_grid(), p.bias_grid(), bias_mode="untied")
    h = np.array([grid[s, t] for s, t in OFFSETS])
    return float(np.dot(p.w2, h) + p.b2), h


def didactic_loss(prediction, target):
    d = prediction - target
    return 0.5 * d * d  # inf rather than OverflowError on python floats


def didactic_gradients(window, target, p: DidacticCnnParams):
    """Partial derivatives of the half squared error, as a 13-vector.

    Ordered like :meth:`DidacticCnnParams.vector`.
    """
    P = patch_matrix(window)
    pred, h = didactic_forward(window, p)
    delta = pred - target
    w2 = np.array(p.w2)
    g_w2 = delta * h
    g_b2 = delta
    # each filter weight collects the input under it in every window k, weighted by w2,k
    g_w1 = delta * (P.T @ w2)
    g_b1 = delta * w2
    return np.concatenate([g_w1, g_b1, g_w2, [g_b2]])


def didactic_sgd_step(window, target, p: DidacticCnnParams) -> DidacticCnnParams:
    """One gradient descent update of all parameters on one sample."""
    eta = p.learning_rate
    new = p.vector() - eta * didactic_gradients(window, target, p)
    if not np.all(np.isfinite(new)):
        raise DivergenceError("didactic update produced non-finite parameters")
    return DidacticCnnParams.from_vector(new, eta)


def _as_pairs(samples):
    out = []
    for s in samples:
        if hasattr(s, "window"):
            out.append((np.asarray(s.window, dtype=float), float(s.target)))
        else:
            w, t = s
            out.append((np.asarray(w, dtype=float), float(t)))
    return out


def didactic_train(samples: Sequence, p0: DidacticCnnParams, epochs: int):
    """Sequential per-sample SGD in the given order.

    `samples` holds ``(window, target)`` pairs or training samples.
    Returns the final parameters and the mean (pre-update) loss of each
    epoch.
    """
    pairs = _as_pairs(samples)
    if not pairs:
        raise InvalidArgument("no training samples")
    for w, _ in pairs:
        _check_window(w)
    p = p0
    losses = []
    for epoch in range(epochs):
        total = 0.0
        for window, target in pairs:
            pred, _ = didactic_forward(window, p)
            total += didactic_loss(pred, target)
            try:
                p = didactic_sgd_step(window, target, p)
            except DivergenceError as exc:
                raise DivergenceError(str(exc), epoch) from None
        mean = total / len(pairs)
        if not math.isfinite(mean):
            raise DivergenceError("didactic training loss is not finite", epoch)
        losses.append(mean)
    return p, losses


def count_fully_connected_params(n_inputs, hidden, n_outputs=1, output_bias=True):
    """Weights plus biases of a one-hidden-layer fully connected net."""
    count = n_inputs * hidden + hidden + hidden * n_outputs
    return count + (n_outputs if output_bias else 0)


def with_learning_rate(p: DidacticCnnParams, eta) -> DidacticCnnParams:
    return replace(p, learning_rate=eta)
