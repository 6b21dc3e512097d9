"""Comparison predictors: unweighted average, linear and logistic regression, MLP.

All models consume a flattened ``x`` by ``y + 1`` window. The logistic
and MLP models squash their output with a sigmoid, so they work on
min-max normalised travel times (inputs and targets) and denormalise
their predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cnn.layers import sigmoid
from .errors import ConfigError, DataError, InvalidArgument, NoData
from .grid import NormalizationParams
from .optim import OPTIMIZERS, descend

RIDGE = 1e-8


def _flat_batch(windows, n_features):
    X = np.asarray(windows, dtype=float)
    single = X.size == n_features
    X = X.reshape(1, -1) if single else X.reshape(X.shape[0], -1)
    if X.shape[1] != n_features:
        raise InvalidArgument(f"window has {X.shape[1]} cells, model expects {n_features}")
    return X, single


# ---------------------------------------------------------------------------
# unweighted average
# ---------------------------------------------------------------------------


def predict_unweighted_average(history):
    h = np.asarray(list(history) if not isinstance(history, np.ndarray) else history, dtype=float)
    if h.size == 0:
        raise NoData("unweighted average needs at least one historical value")
    return float(h.mean())


# ---------------------------------------------------------------------------
# linear regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).reshape(-1))
        object.__setattr__(self, "bias", float(self.bias))


def fit_linear(X, t, ridge=RIDGE) -> LinearModel:
    """Least squares via the normal equations on centred data.

    Centring keeps the intercept out of the damping term, so a design
    with constant columns gets zero weight on them and the mean target
    as bias. `ridge` regularises singular designs.
    """
    X = np.asarray(X, dtype=float)
    X = X.reshape(X.shape[0], -1)
    t = np.asarray(t, dtype=float).reshape(-1)
    n, p = X.shape
    if n != len(t):
        raise InvalidArgument("sample and target counts differ")
    if n < p + 1:
        raise DataError(f"underdetermined: {n} samples for {p + 1} parameters")
    mx = X.mean(axis=0)
    mt = t.mean()
    Xc = X - mx
    A = Xc.T @ Xc + ridge * np.eye(p)
    w = np.linalg.solve(A, Xc.T @ (t - mt))
    return LinearModel(w, mt - mx @ w)


def predict_linear(model: LinearModel, window):
    X, single = _flat_batch(window, model.weights.size)
    out = X @ model.weights + model.bias
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# gradient-trained models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.01
    epochs: int = 2500
    momentum: float = 0.9
    init_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0 or self.epochs < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("need learning_rate > 0, epochs >= 0, 0 <= momentum < 1")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")

    def to_dict(self):
        return {"optimizer": self.optimizer, "learning_rate": self.learning_rate,
                "epochs": self.epochs, "momentum": self.momentum,
                "init_scale": self.init_scale, "seed": self.seed}


def _descend(params, grad_fn, config: TrainConfig, what):
    return descend(params, grad_fn, config.optimizer, config.learning_rate, config.epochs,
                   config.momentum, what)


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    normalization: NormalizationParams
    losses: list = field(default_factory=list, repr=False)


def logistic_loss_and_gradients(w, b, Xn, tn):
    s = sigmoid(Xn @ w + b)
    d = s - tn
    n = len(tn)
    dz = d * s * (1.0 - s) / n
    return 0.5 * float(np.mean(d ** 2)), Xn.T @ dz, float(dz.sum())


def fit_logistic(X, t, normalization: NormalizationParams, config: TrainConfig = TrainConfig(),
                 weights=None, bias=None) -> LogisticModel:
    X = np.asarray(X, dtype=float)
    Xn = normalization.normalize(X.reshape(X.shape[0], -1))
    tn = normalization.normalize(t)
    rng = np.random.default_rng(config.seed)
    w = rng.uniform(-config.init_scale, config.init_scale, Xn.shape[1]) if weights is None \
        else np.array(weights, dtype=float)
    b = np.array(rng.uniform(-config.init_scale, config.init_scale) if bias is None else bias,
                 dtype=float)

    def grad_fn():
        loss, gw, gb = logistic_loss_and_gradients(w, b, Xn, tn)
        return loss, (gw, np.array(gb))

    losses = _descend([w, b], grad_fn, config, "logistic")
    return LogisticModel(w, float(b), normalization, losses)


def predict_logistic(model: LogisticModel, window):
    X, single = _flat_batch(window, model.weights.size)
    norm = model.normalization
    out = norm.denormalize(sigmoid(norm.normalize(X) @ model.weights + model.bias))
    return float(out[0]) if single else out


@dataclass
class MlpModel:
    hidden_weights: np.ndarray   # (n_inputs, hidden_count)
    hidden_biases: np.ndarray    # (hidden_count,)
    output_weights: np.ndarray   # (hidden_count,)
    output_bias: float
    normalization: Optional[NormalizationParams] = None
    losses: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.hidden_weights = np.asarray(self.hidden_weights, dtype=float)
        self.hidden_biases = np.asarray(self.hidden_biases, dtype=float).reshape(-1)
        self.output_weights = np.asarray(self.output_weights, dtype=float).reshape(-1)
        self.output_bias = float(self.output_bias)
        h = self.hidden_biases.size
        if self.hidden_weights.ndim != 2 or self.hidden_weights.shape[1] != h \
                or self.output_weights.size != h:
            raise ConfigError("inconsistent MLP layer shapes")
        for a in (self.hidden_weights, self.hidden_biases, self.output_weights):
            if not np.all(np.isfinite(a)):
                raise ConfigError("MLP parameters must be finite")

    @property
    def hidden_count(self):
        return self.hidden_biases.size

    def vector(self):
        return np.concatenate([self.hidden_weights.ravel(), self.hidden_biases,
                               self.output_weights, [self.output_bias]])


def mlp_forward_normalized(model: MlpModel, Xn):
    """Hidden sigmoid units, then a sigmoid output; returns (output, hidden)."""
    hidden = sigmoid(Xn @ model.hidden_weights + model.hidden_biases)
    return sigmoid(hidden @ model.output_weights + model.output_bias), hidden


def mlp_forward(model: MlpModel, window):
    """Prediction in hours for a raw window (or batch of windows)."""
    X, single = _flat_batch(window, model.hidden_weights.shape[0])
    if model.normalization is None:
        raise ConfigError("MLP has no normalisation parameters")
    out, _ = mlp_forward_normalized(model, model.normalization.normalize(X))
    out = model.normalization.denormalize(out)
    return float(out[0]) if single else out


def mlp_loss_and_gradients(model: MlpModel, Xn, tn):
    """Mean half squared error and gradients (hidden_w, hidden_b, out_w, out_b)."""
    out, hidden = mlp_forward_normalized(model, Xn)
    n = len(tn)
    d = out - tn
    dz_out = d * out * (1.0 - out) / n
    g_ow = hidden.T @ dz_out
    g_ob = dz_out.sum()
    dz_h = np.outer(dz_out, model.output_weights) * hidden * (1.0 - hidden)
    g_hw = Xn.T @ dz_h
    g_hb = dz_h.sum(axis=0)
    return 0.5 * float(np.mean(d ** 2)), (g_hw, g_hb, g_ow, np.array(g_ob))


def init_mlp(n_inputs, hidden_count, rng, scale=0.5, normalization=None):
    return MlpModel(
        rng.uniform(-scale, scale, (n_inputs, hidden_count)),
        rng.uniform(-scale, scale, hidden_count),
        rng.uniform(-scale, scale, hidden_count),
        rng.uniform(-scale, scale),
        normalization,
    )


def mlp_train(X, t, normalization: NormalizationParams, config: TrainConfig = TrainConfig(),
              hidden_count=2, model: Optional[MlpModel] = None) -> MlpModel:
    X = np.asarray(X, dtype=float)
    Xn = normalization.normalize(X.reshape(X.shape[0], -1))
    tn = normalization.normalize(t)
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = init_mlp(Xn.shape[1], hidden_count, rng, config.init_scale)
    model = MlpModel(model.hidden_weights.copy(), model.hidden_biases.copy(),
                     model.output_weights.copy(), model.output_bias, normalization)
    ob = np.array(model.output_bias)
    params = [model.hidden_weights, model.hidden_biases, model.output_weights, ob]

    def grad_fn():
        model.output_bias = float(ob)
        return mlp_loss_and_gradients(model, Xn, tn)

    model.losses = _descend(params, grad_fn, config, "MLP")
    model.output_bias = float(ob)
    return model
