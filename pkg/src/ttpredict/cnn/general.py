"""Configurable time-space CNN trained by full-batch gradient descent.

Architecture, for an ``x`` by ``y + 1`` input window::

    conv 2x2 (filters[0]) -> sigmoid -> conv 2x2 (filters[1]) -> sigmoid
    -> [optional 2x2 pooling] -> flatten
    -> dense(hidden[0]) -> sigmoid -> ... -> dense(hidden[-1]) -> sigmoid
    -> dense(1), linear

Each conv filter has one shared bias. Inputs and targets live on the
normalised scale; :func:`predict_hours` handles the conversion. All
gradients are written out by hand (see :func:`loss_and_gradients`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, InvalidArgument
from ..grid import NormalizationParams
from ..optim import OPTIMIZERS, descend
from .layers import (
    conv_backward_nhwc,
    conv_forward_nhwc,
    pool_backward,
    pool_forward,
    pooled_shape,
    sigmoid,
)


@dataclass(frozen=True)
class GeneralCnnConfig:
    filters: tuple = (4, 8)
    hidden: tuple = (16, 16, 8)
    pooling: Optional[str] = None
    optimizer: str = "adam"
    learning_rate: float = 0.02
    momentum: float = 0.9
    epochs: int = 2500
    init_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.filters or any(f < 1 for f in self.filters):
            raise ConfigError("need at least one conv layer with positive filter counts")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if self.pooling not in (None, "max", "mean"):
            raise ConfigError(f"pooling must be None, 'max' or 'mean', got {self.pooling!r}")
        if not self.learning_rate > 0 or not 0 <= self.momentum < 1 or self.epochs < 0:
            raise ConfigError("need learning_rate > 0, 0 <= momentum < 1, epochs >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")

    def to_dict(self):
        return {
            "filters": list(self.filters), "hidden": list(self.hidden), "pooling": self.pooling,
            "optimizer": self.optimizer, "learning_rate": self.learning_rate, "momentum": self.momentum, "epochs": self.epochs,
            "init_scale": self.init_scale, "seed": self.seed,
        }


def shape_chain(input_shape, filters, pooling=None):
    """Feature map shapes after every stage; raises ConfigError if a conv cannot fit."""
    h, w = input_shape
    shapes = [(1, h, w)]
    for f in filters:
        h, w = h - 1, w - 1
        if h < 1 or w < 1:
            raise ConfigError(
                f"input {tuple(input_shape)} too small for {len(filters)} valid 2x2 convolutions"
            )
        shapes.append((f, h, w))
    if pooling:
        h, w = pooled_shape(h, w)
        shapes.append((filters[-1], h, w))
    return shapes


@dataclass
class GeneralCnnModel:
    input_shape: tuple
    filters: tuple
    hidden: tuple
    pooling: Optional[str]
    params: dict
    normalization: Optional[NormalizationParams] = None
    config: Optional[GeneralCnnConfig] = field(default=None, repr=False)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        expected = param_shapes(self.input_shape, self.filters, self.hidden, self.pooling)
        if list(self.params) != list(expected):
            raise ConfigError(f"parameter names {list(self.params)} != {list(expected)}")
        for name, shape in expected.items():
            arr = np.asarray(self.params[name], dtype=float)
            if arr.shape != shape:
                raise ConfigError(f"{name}: shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name}: non-finite parameters")
            self.params[name] = arr

    @property
    def n_params(self):
        return sum(p.size for p in self.params.values())


def param_shapes(input_shape, filters, hidden, pooling=None):
    chain = shape_chain(input_shape, filters, pooling)
    shapes = {}
    c_in = 1
    for i, f in enumerate(filters):
        shapes[f"conv{i}.w"] = (f, c_in, 2, 2)
        shapes[f"conv{i}.b"] = (f,)
        c_in = f
    width = int(np.prod(chain[-1]))
    for i, h in enumerate(hidden):
        shapes[f"dense{i}.w"] = (width, h)
        shapes[f"dense{i}.b"] = (h,)
        width = h
    shapes["out.w"] = (width,)
    shapes["out.b"] = ()
    return shapes


def init_model(input_shape, config: GeneralCnnConfig, normalization=None, rng=None):
    """Uniform [-init_scale, init_scale] weights from a seeded generator."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    shapes = param_shapes(input_shape, config.filters, config.hidden, config.pooling)
    params = {k: rng.uniform(-config.init_scale, config.init_scale, size=s) for k, s in shapes.items()}
    return GeneralCnnModel(input_shape, config.filters, config.hidden, config.pooling, params,
                           normalization, config)


def zero_model(input_shape, config: GeneralCnnConfig, out_bias=0.0):
    shapes = param_shapes(input_shape, config.filters, config.hidden, config.pooling)
    params = {k: np.zeros(s) for k, s in shapes.items()}
    params["out.b"] = np.array(float(out_bias))
    return GeneralCnnModel(input_shape, config.filters, config.hidden, config.pooling, params,
                           None, config)


def _as_batch(model, windows):
    X = np.asarray(windows, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.shape[1:] != model.input_shape:
        raise InvalidArgument(f"window shape {X.shape[1:]} != model input {model.input_shape}")
    return X, single


def _forward(model, X):
    # channels-last internally: (n, H, W, c)
    p = model.params
    a = X[..., None]
    cache = {"conv_shape": [], "conv_cols": [], "conv_act": [], "dense_in": [], "dense_act": []}
    for i in range(len(model.filters)):
        cache["conv_shape"].append(a.shape)
        z, cols = conv_forward_nhwc(a, p[f"conv{i}.w"], p[f"conv{i}.b"])
        a = sigmoid(z)
        cache["conv_cols"].append(cols)
        cache["conv_act"].append(a)
    if model.pooling:
        pooled, cache["pool"] = pool_forward(a.transpose(0, 3, 1, 2), model.pooling)
        a = pooled.transpose(0, 2, 3, 1)
    cache["flat_shape"] = a.shape
    a = a.reshape(a.shape[0], -1)
    for i in range(len(model.hidden)):
        cache["dense_in"].append(a)
        a = sigmoid(a @ p[f"dense{i}.w"] + p[f"dense{i}.b"])
        cache["dense_act"].append(a)
    cache["out_in"] = a
    return a @ p["out.w"] + p["out.b"], cache


def general_forward(windows, model: GeneralCnnModel):
    """Normalised prediction(s) for normalised window(s)."""
    X, single = _as_batch(model, windows)
    out, _ = _forward(model, X)
    return float(out[0]) if single else out


def loss_and_gradients(model: GeneralCnnModel, X, t):
    """Mean half squared error over the batch and its gradient per parameter."""
    X, _ = _as_batch(model, X)
    t = np.asarray(t, dtype=float).reshape(-1)
    n = X.shape[0]
    out, cache = _forward(model, X)
    delta = out - t
    loss = 0.5 * float(np.mean(delta ** 2))
    p = model.params
    g = {}

    d = delta / n
    g["out.w"] = cache["out_in"].T @ d
    g["out.b"] = np.array(d.sum())
    da = np.outer(d, p["out.w"])
    for i in reversed(range(len(model.hidden))):
        act = cache["dense_act"][i]
        dz = da * act * (1.0 - act)
        g[f"dense{i}.w"] = cache["dense_in"][i].T @ dz
        g[f"dense{i}.b"] = dz.sum(axis=0)
        da = dz @ p[f"dense{i}.w"].T
    da = da.reshape(cache["flat_shape"])
    if model.pooling:
        da = pool_backward(da.transpose(0, 3, 1, 2), cache["pool"], model.pooling).transpose(0, 2, 3, 1)
    for i in reversed(range(len(model.filters))):
        act = cache["conv_act"][i]
        dz = da * act * (1.0 - act)
        da, g[f"conv{i}.w"], g[f"conv{i}.b"] = conv_backward_nhwc(
            dz, cache["conv_cols"][i], p[f"conv{i}.w"], cache["conv_shape"][i], need_dx=i > 0)
    return loss, {k: g[k] for k in p}


def general_train(X, t, config: GeneralCnnConfig, normalization=None, model=None):
    """Full-batch training on normalised windows `X` and targets `t`.

    Returns the trained model and the loss recorded before each epoch's
    update.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 3 or len(X) == 0:
        raise InvalidArgument("expected a non-empty (n, x, y+1) batch")
    if model is None:
        model = init_model(X.shape[1:], config, normalization)
    params = {k: np.array(v, dtype=float) for k, v in model.params.items()}
    model = GeneralCnnModel(model.input_shape, model.filters, model.hidden, model.pooling,
                            params, normalization, config)
    names = list(params)

    def grad_fn():
        loss, grads = loss_and_gradients(model, X, t)
        return loss, [grads[k] for k in names]

    losses = descend([params[k] for k in names], grad_fn, config.optimizer,
                     config.learning_rate, config.epochs, config.momentum, "CNN")
    return model, losses


def predict_hours(model: GeneralCnnModel, windows_hr):
    """Travel times in hours for raw (hour-valued) windows."""
    if model.normalization is None:
        raise ConfigError("model has no normalisation parameters")
    norm = model.normalization
    out = general_forward(norm.normalize(windows_hr), model)
    return norm.denormalize(out)
