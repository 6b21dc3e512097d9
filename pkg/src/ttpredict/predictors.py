"""Uniform fit/predict wrappers around every method, plus JSON persistence.

A :class:`Predictor` knows the window it was trained on and maps raw
(hour-valued) windows to travel times in hours, whatever the underlying
model does internally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import baselines as bl
from .cnn import didactic as dd
from .cnn import general as gc
from .errors import ConfigError, DataError, InvalidArgument
from .grid import NormalizationParams

METHODS = ("avg", "linear", "logistic", "nn", "cnn-didactic", "cnn-general")


@dataclass(frozen=True)
class WindowConfig:
    """Segments ``first_segment .. first_segment + x - 1``, ``y`` lagged intervals, target `z`.

    ``z=None`` means every segment of the window is a target in turn.
    """

    x: int = 3
    y: int = 2
    z: Optional[int] = None
    first_segment: int = 0

    def __post_init__(self):
        if self.x < 1 or self.y < 0 or self.first_segment < 0:
            raise ConfigError("window needs x >= 1, y >= 0, first_segment >= 0")
        if self.z is not None and not 0 <= self.z < self.x:
            raise ConfigError(f"target index z={self.z} outside window of {self.x} segments")

    @property
    def targets(self):
        return list(range(self.x)) if self.z is None else [self.z]

    def for_target(self, z):
        return WindowConfig(self.x, self.y, z, self.first_segment)

    def to_dict(self):
        return {"x": self.x, "y": self.y, "z": self.z, "first_segment": self.first_segment}

    @classmethod
    def parse(cls, text):
        """From ``"x,y,z"`` or ``"x,y"`` (all targets)."""
        try:
            parts = [int(p) for p in str(text).split(",")]
        except ValueError:
            raise ConfigError(f"bad window spec {text!r}; expected x,y[,z]") from None
        if len(parts) not in (2, 3):
            raise ConfigError(f"bad window spec {text!r}; expected x,y[,z]")
        return cls(parts[0], parts[1], parts[2] if len(parts) == 3 else None)


@dataclass(frozen=True)
class DidacticConfig:
    learning_rate: float = 0.05
    epochs: int = 10
    init_scale: float = 0.5
    seed: int = 0

    def to_dict(self):
        return {"learning_rate": self.learning_rate, "epochs": self.epochs,
                "init_scale": self.init_scale, "seed": self.seed}


@dataclass(frozen=True)
class ExperimentConfig:
    train: bl.TrainConfig = field(default_factory=bl.TrainConfig)
    cnn: gc.GeneralCnnConfig = field(default_factory=gc.GeneralCnnConfig)
    didactic: DidacticConfig = field(default_factory=DidacticConfig)
    hidden_count: int = 2
    fill_policy: str = "drop"
    margin: float = 0.05

    def to_dict(self):
        return {"train": self.train.to_dict(), "cnn": self.cnn.to_dict(),
                "didactic": self.didactic.to_dict(), "hidden_count": self.hidden_count,
                "fill_policy": self.fill_policy, "margin": self.margin}

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        try:
            train = bl.TrainConfig(**d.pop("train", {}))
            cnn_d = dict(d.pop("cnn", {}))
            cnn = gc.GeneralCnnConfig(**cnn_d)
            did = DidacticConfig(**d.pop("didactic", {}))
            return cls(train, cnn, did, **d)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from None

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None


@dataclass
class Predictor:
    method: str
    window: WindowConfig
    model: Any = None
    normalization: Optional[NormalizationParams] = None
    seed: Optional[int] = None
    config: dict = field(default_factory=dict)

    def predict(self, windows):
        """Travel times (hours) for a batch of raw windows shaped (n, x, y+1)."""
        X = np.asarray(windows, dtype=float)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != (self.window.x, self.window.y + 1):
            raise InvalidArgument(f"windows shaped {X.shape[1:]}, predictor expects "
                                  f"{(self.window.x, self.window.y + 1)}")
        m = self.method
        if m == "avg":
            return X[:, self.window.z, :].mean(axis=1)
        if m == "linear":
            return np.atleast_1d(bl.predict_linear(self.model, X))
        if m == "logistic":
            return np.atleast_1d(bl.predict_logistic(self.model, X))
        if m == "nn":
            return np.atleast_1d(bl.mlp_forward(self.model, X))
        if m == "cnn-general":
            return np.atleast_1d(gc.predict_hours(self.model, X))
        if m == "cnn-didactic":
            norm = self.normalization
            Xn = norm.normalize(X)
            out = np.array([dd.didactic_forward(w, self.model)[0] for w in Xn])
            return norm.denormalize(out)
        raise ConfigError(f"unknown method {m!r}")


def fit_predictor(method, X, t, window: WindowConfig, config: ExperimentConfig) -> Predictor:
    """Train `method` on raw windows `X` (n, x, y+1) and targets `t` in hours."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    if window.z is None:
        raise ConfigError("fit_predictor needs a single target index")
    X = np.asarray(X, dtype=float)
    t = np.asarray(t, dtype=float)
    if len(X) == 0:
        raise ConfigError("no training samples")
    norm = NormalizationParams.from_training(np.concatenate([X.ravel(), t]), config.margin)
    if method == "avg":
        return Predictor(method, window, None, None, None, {})
    if method == "linear":
        return Predictor(method, window, bl.fit_linear(X, t), None, None, {"ridge": bl.RIDGE})
    if method == "logistic":
        model = bl.fit_logistic(X, t, norm, config.train)
        return Predictor(method, window, model, norm, config.train.seed, config.train.to_dict())
    if method == "nn":
        model = bl.mlp_train(X, t, norm, config.train, hidden_count=config.hidden_count)
        cfg = dict(config.train.to_dict(), hidden_count=config.hidden_count)
        return Predictor(method, window, model, norm, config.train.seed, cfg)
    if method == "cnn-general":
        model, _ = gc.general_train(norm.normalize(X), norm.normalize(t), config.cnn, norm)
        return Predictor(method, window, model, norm, config.cnn.seed, config.cnn.to_dict())
    # cnn-didactic
    if X.shape[1:] != (3, 3):
        raise ConfigError("cnn-didactic needs a 3x3 window (x=3, y=2)")
    d = config.didactic
    p0 = dd.DidacticCnnParams.random(np.random.default_rng(d.seed), d.learning_rate, d.init_scale)
    p, _ = dd.didactic_train(list(zip(norm.normalize(X), norm.normalize(t))), p0, d.epochs)
    return Predictor(method, window, p, norm, d.seed, d.to_dict())


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _arr(a):
    return np.asarray(a, dtype=float).ravel().tolist()


def predictor_to_dict(pred: Predictor) -> dict:
    doc = {
        "model_type": pred.method,
        "window": pred.window.to_dict(),
        "normalization": pred.normalization.to_dict() if pred.normalization else None,
        "seed": pred.seed,
        "config": pred.config,
    }
    m = pred.model
    if pred.method in ("linear", "logistic"):
        doc["shape"] = {"n_inputs": int(m.weights.size)}
        doc["weights"] = _arr(m.weights)
        doc["bias"] = float(m.bias)
    elif pred.method == "nn":
        doc["shape"] = {"n_inputs": int(m.hidden_weights.shape[0]), "hidden_count": m.hidden_count}
        doc["hidden_weights"] = _arr(m.hidden_weights)
        doc["hidden_biases"] = _arr(m.hidden_biases)
        doc["output_weights"] = _arr(m.output_weights)
        doc["output_bias"] = float(m.output_bias)
    elif pred.method == "cnn-didactic":
        doc["arch"] = "didactic"
        doc["shape"] = {"input": [3, 3], "n_params": dd.N_PARAMS}
        doc["parameters"] = _arr(m.vector())
        doc["learning_rate"] = m.learning_rate
    elif pred.method == "cnn-general":
        doc["arch"] = "general"
        doc["shape"] = {"input": list(m.input_shape), "filters": list(m.filters),
                        "hidden": list(m.hidden), "pooling": m.pooling}
        doc["parameters"] = {k: _arr(v) for k, v in m.params.items()}
    return doc


def _reshape(values, shape, what):
    a = np.asarray(values, dtype=float)
    if a.size != int(np.prod(shape)):
        raise DataError(f"{what}: {a.size} values do not fit shape {shape}")
    return a.reshape(shape)


def predictor_from_dict(doc: dict) -> Predictor:
    try:
        method = doc["model_type"]
        window = WindowConfig(**doc["window"])
        norm = NormalizationParams(**doc["normalization"]) if doc.get("normalization") else None
        seed, cfg = doc.get("seed"), doc.get("config", {})
        if method == "avg":
            model = None
        elif method in ("linear", "logistic"):
            n = window.x * (window.y + 1)
            if doc["shape"]["n_inputs"] != n:
                raise DataError("weights do not match the window size")
            w = _reshape(doc["weights"], (n,), "weights")
            model = bl.LinearModel(w, doc["bias"]) if method == "linear" \
                else bl.LogisticModel(w, float(doc["bias"]), norm)
        elif method == "nn":
            n, h = doc["shape"]["n_inputs"], doc["shape"]["hidden_count"]
            if n != window.x * (window.y + 1):
                raise DataError("hidden weights do not match the window size")
            model = bl.MlpModel(_reshape(doc["hidden_weights"], (n, h), "hidden_weights"),
                                _reshape(doc["hidden_biases"], (h,), "hidden_biases"),
                                _reshape(doc["output_weights"], (h,), "output_weights"),
                                doc["output_bias"], norm)
        elif method == "cnn-didactic":
            model = dd.DidacticCnnParams.from_vector(
                _reshape(doc["parameters"], (dd.N_PARAMS,), "parameters"), doc["learning_rate"])
        elif method == "cnn-general":
            s = doc["shape"]
            if tuple(s["input"]) != (window.x, window.y + 1):
                raise DataError("CNN input shape does not match the window")
            shapes = gc.param_shapes(s["input"], s["filters"], s["hidden"], s["pooling"])
            if set(doc["parameters"]) != set(shapes):
                raise DataError("CNN parameter names do not match the architecture")
            params = {k: _reshape(doc["parameters"][k], shp, k) for k, shp in shapes.items()}
            model = gc.GeneralCnnModel(s["input"], tuple(s["filters"]), tuple(s["hidden"]),
                                       s["pooling"], params, norm)
        else:
            raise DataError(f"unknown model_type {method!r}")
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed model document: {exc}") from None
    except (ConfigError, InvalidArgument) as exc:
        raise DataError(f"invalid model document: {exc}") from None
    return Predictor(method, window, model, norm, seed, cfg)


def save_predictor(pred: Predictor, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(predictor_to_dict(pred), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_predictor(path) -> Predictor:
    try:
        with open(path, encoding="utf-8") as fh:
            return predictor_from_dict(json.load(fh))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from None
