"""Error metrics, experiment orchestration and comparison reports.

An experiment fills the matrix, windows it for each target segment,
splits the samples by date, fits on the training part only and scores
the test part with MAPE. Reports are plain data and serialise to
canonical JSON, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InvalidArgument, NoData
from .grid import (
    TimeSpaceMatrix,
    build_matrix,
    fill_missing,
    parse_instant,
    read_matrix_csv,
    split_by_date,
    stack_samples,
    to_iso,
    window_samples,
)
from .predictors import METHODS, ExperimentConfig, Predictor, WindowConfig, fit_predictor
from .synth import ScenarioConfig, default_segments, generate_scenario, random_congestion_events
from .traffic_core import DEFAULT_MAX_TRIP_HR, aggregate_travel_times, match_trip_table

# accuracy requirements (percent) used as reference rows in comparison tables
REQUIREMENTS = {"provincial road requirement": 25.0, "freeway requirement": 10.0}


def relative_error(actual, predicted):
    """|actual - predicted| / actual for a single positive actual value."""
    actual = float(actual)
    if not actual > 0:
        raise InvalidArgument(f"relative error needs a positive actual value, got {actual}")
    return abs(actual - float(predicted)) / actual


@dataclass(frozen=True)
class MapeResult:
    value: float      # percent
    n: int            # pairs used
    excluded: int     # pairs dropped for a nonpositive or non-finite actual


def mape_detail(actual, predicted) -> MapeResult:
    a = np.asarray(actual, dtype=float).reshape(-1)
    p = np.asarray(predicted, dtype=float).reshape(-1)
    if a.shape != p.shape:
        raise InvalidArgument("actual and predicted lengths differ")
    ok = np.isfinite(a) & (a > 0)
    if not ok.any():
        raise NoData("no pairs with a positive actual value")
    err = np.abs(a[ok] - p[ok]) / a[ok]
    return MapeResult(100.0 * float(np.mean(err)), int(ok.sum()), int((~ok).sum()))


def mape(pairs) -> float:
    """Mean absolute percentage error over (actual, predicted) pairs.

    Pairs whose actual value is not positive are skipped; use
    :func:`mape_detail` to see how many.
    """
    pairs = list(pairs)
    if not pairs:
        raise NoData("mape of an empty pair list")
    a, p = zip(*pairs)
    return mape_detail(a, p).value


# ---------------------------------------------------------------------------
# digests
# ---------------------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)


def data_digest(m: TimeSpaceMatrix) -> str:
    h = hashlib.sha256()
    h.update("\x1f".join(m.segment_ids).encode())
    h.update(np.ascontiguousarray(m.interval_starts, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(np.where(m.mask, m.values, 0.0), dtype="<f8").tobytes())
    h.update(np.packbits(m.mask).tobytes())
    return h.hexdigest()


def config_digest(*parts) -> str:
    return hashlib.sha256(canonical_json(list(parts)).encode()).hexdigest()


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class SegmentResult:
    segment_id: str
    target_index: int
    mape: float
    n_train: int
    n_test: int
    excluded: int
    normalization: Optional[dict] = None

    def to_dict(self):
        return {"segment_id": self.segment_id, "target_index": self.target_index,
                "mape": self.mape, "n_train": self.n_train, "n_test": self.n_test,
                "excluded": self.excluded, "normalization": self.normalization}


@dataclass
class EvalReport:
    method: str
    segments: list
    overall_mape: float
    n_train: int
    n_test: int
    excluded: int
    boundary: str
    window: dict
    data_digest: str
    config_digest: str
    predictors: list = field(default_factory=list, repr=False, compare=False)

    @property
    def per_segment_mape(self):
        return {s.segment_id: s.mape for s in self.segments}

    def to_dict(self):
        return {"method": self.method, "overall_mape": self.overall_mape,
                "n_train": self.n_train, "n_test": self.n_test, "excluded": self.excluded,
                "boundary": self.boundary, "window": self.window,
                "data_digest": self.data_digest, "config_digest": self.config_digest,
                "segments": [s.to_dict() for s in self.segments]}

    def to_json(self):
        return canonical_json(self.to_dict())


def as_matrix(data) -> TimeSpaceMatrix:
    """Accept a matrix, a scenario config, or a path to a matrix CSV."""
    if isinstance(data, TimeSpaceMatrix):
        return data
    if isinstance(data, ScenarioConfig):
        return generate_scenario(data)
    return read_matrix_csv(data)


@dataclass
class SplitData:
    window: WindowConfig
    segment_id: str
    X_train: np.ndarray
    t_train: np.ndarray
    X_test: np.ndarray
    t_test: np.ndarray


def prepare_splits(m: TimeSpaceMatrix, window: WindowConfig, boundary, fill_policy="drop"):
    """Fill, window and split `m` once per target segment of `window`."""
    if window.first_segment + window.x > len(m.segment_ids):
        raise ConfigError(f"window of {window.x} segments from {window.first_segment} "
                          f"exceeds the {len(m.segment_ids)} matrix rows")
    if window.y + 2 > m.shape[1]:
        raise ConfigError(f"y={window.y} needs at least {window.y + 2} intervals")
    filled = fill_missing(m, fill_policy)
    b = parse_instant(boundary)
    out = []
    for z in window.targets:
        samples = window_samples(filled, window.x, window.y, z, window.first_segment)
        train, test = split_by_date(samples, b)
        seg = m.segment_ids[window.first_segment + z]
        if not train:
            raise ConfigError(f"empty training split for {seg} before {to_iso(b)}")
        if not test:
            raise ConfigError(f"empty test split for {seg} from {to_iso(b)}")
        Xtr, ttr = stack_samples(train)
        Xte, tte = stack_samples(test)
        out.append(SplitData(window.for_target(z), seg, Xtr, ttr, Xte, tte))
    return out


def _evaluate_splits(method, splits, boundary, base_window, config, ddigest):
    segments, predictors, actual, predicted = [], [], [], []
    for sp in splits:
        pred = fit_predictor(method, sp.X_train, sp.t_train, sp.window, config)
        p = pred.predict(sp.X_test)
        r = mape_detail(sp.t_test, p)
        norm = pred.normalization.to_dict() if pred.normalization else None
        segments.append(SegmentResult(sp.segment_id, sp.window.z, r.value, len(sp.t_train),
                                      r.n, r.excluded, norm))
        predictors.append(pred)
        actual.append(sp.t_test)
        predicted.append(p)
    overall = mape_detail(np.concatenate(actual), np.concatenate(predicted))
    b = to_iso(parse_instant(boundary))
    digest = config_digest(method, base_window.to_dict(), b, _method_config(method, config), ddigest)
    return EvalReport(method, segments, overall.value, sum(s.n_train for s in segments),
                      overall.n, overall.excluded, b, base_window.to_dict(), ddigest, digest,
                      predictors)


def _method_config(method, config: ExperimentConfig):
    # only the settings a method actually uses feed its digest
    d = {"fill_policy": config.fill_policy, "margin": config.margin}
    if method in ("logistic", "nn"):
        d["train"] = config.train.to_dict()
    if method == "nn":
        d["hidden_count"] = config.hidden_count
    if method == "cnn-general":
        d["cnn"] = config.cnn.to_dict()
    if method == "cnn-didactic":
        d["didactic"] = config.didactic.to_dict()
    return d


def run_experiment(data, method: str, window: WindowConfig, boundary,
                   config: Optional[ExperimentConfig] = None) -> EvalReport:
    """Fit `method` before `boundary` and score it from `boundary` on.

    `data` is a matrix, a scenario config (generated on the fly) or a
    matrix CSV path. Every target segment of `window` gets its own model;
    the report holds their MAPEs and the pooled overall MAPE.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    config = config or ExperimentConfig()
    m = as_matrix(data)
    splits = prepare_splits(m, window, boundary, config.fill_policy)
    return _evaluate_splits(method, splits, boundary, window, config, data_digest(m))


@dataclass
class Comparison:
    reports: list   # ascending overall MAPE, ties by method name
    boundary: str
    window: dict
    data_digest: str

    @property
    def ranking(self):
        return [r.method for r in self.reports]

    def report(self, method) -> EvalReport:
        for r in self.reports:
            if r.method == method:
                return r
        raise KeyError(method)

    def format_table(self) -> str:
        rows = [(r.method, r.overall_mape) for r in self.reports]
        width = max([len("Method")] + [len(k) for k, _ in rows] + [len(k) for k in REQUIREMENTS])
        lines = [f"{'Method':<{width}}  MAPE (%)", "-" * (width + 10)]
        lines += [f"{name:<{width}}  {value:8.2f}" for name, value in rows]
        lines.append("-" * (width + 10))
        lines += [f"{name:<{width}}  {value:8.2f}" for name, value in REQUIREMENTS.items()]
        return "\n".join(lines)

    def to_dict(self):
        return {"boundary": self.boundary, "window": self.window,
                "data_digest": self.data_digest, "ranking": self.ranking,
                "requirements": dict(REQUIREMENTS),
                "methods": {r.method: r.to_dict() for r in self.reports}}

    def to_json(self):
        return canonical_json(self.to_dict())


def compare_methods(data, methods: Sequence[str], window: WindowConfig, boundary,
                    config: Optional[ExperimentConfig] = None) -> Comparison:
    """Run every method on the same splits and rank them by overall MAPE."""
    methods = list(dict.fromkeys(methods))
    if not methods:
        raise ConfigError("no methods to compare")
    for name in methods:
        if name not in METHODS:
            raise ConfigError(f"unknown method {name!r}; expected one of {METHODS}")
    config = config or ExperimentConfig()
    m = as_matrix(data)
    splits = prepare_splits(m, window, boundary, config.fill_policy)
    digest = data_digest(m)
    reports = [_evaluate_splits(name, splits, boundary, window, config, digest) for name in sorted(methods)]
    reports.sort(key=lambda r: (r.overall_mape, r.method))
    return Comparison(reports, to_iso(parse_instant(boundary)), window.to_dict(), digest)


def fit_method(data, method, window: WindowConfig, boundary,
               config: Optional[ExperimentConfig] = None) -> Predictor:
    """Train `method` on everything before `boundary` for a single target."""
    if window.z is None:
        raise ConfigError("training a model needs a target index (window x,y,z)")
    config = config or ExperimentConfig()
    m = as_matrix(data)
    if window.first_segment + window.x > len(m.segment_ids):
        raise ConfigError("window exceeds the matrix rows")
    filled = fill_missing(m, config.fill_policy)
    samples = window_samples(filled, window.x, window.y, window.z, window.first_segment)
    train, _ = split_by_date(samples, boundary)
    if not train:
        raise ConfigError("empty training split")
    X, t = stack_samples(train)
    return fit_predictor(method, X, t, window, config)


def forecast(pred: Predictor, data, fill_policy="drop"):
    """Predictions for every complete window of `data`.

    Returns ``(target_starts, segment_id, predicted_hours, actual_hours)``;
    the actual value is NaN where the next interval is not observed.
    """
    m = fill_missing(as_matrix(data), fill_policy)
    w = pred.window
    if w.first_segment + w.x > len(m.segment_ids):
        raise ConfigError("model window exceeds the matrix rows")
    samples = window_samples(m, w.x, w.y, w.z, w.first_segment, require_target=False)
    if not samples:
        raise NoData("matrix has no complete window for this model")
    X, actual = stack_samples(samples)
    starts = np.array([s.target_start for s in samples], dtype=np.int64)
    return starts, m.segment_ids[w.first_segment + w.z], pred.predict(X), actual


def corridor_scenario(seed=0, days=28, n_segments=3, per_day=8.0, severity=(0.4, 0.7),
                      noise_sd_rel=0.03) -> ScenarioConfig:
    """Congested corridor used for method comparisons.

    Demand follows a daily cycle between 250 and 450 vehicles per
    interval; congestion events start at random segments and spread
    upstream.
    """
    horizon = days * 288
    phase = np.linspace(0, 2 * np.pi, 288, endpoint=False) - np.pi / 2
    profile = 250 + 200 * np.sin(phase) ** 2
    cfg = ScenarioConfig(default_segments(n_segments), horizon, demand_profile=profile,
                         seed=seed, noise_sd_rel=noise_sd_rel)
    rng = np.random.default_rng([seed, 3])
    cfg.congestion_events = random_congestion_events(rng, n_segments, horizon, per_day=per_day,
                                                     severity=severity)
    return cfg


def date_split(m: TimeSpaceMatrix, train_fraction=0.8) -> str:
    """Boundary putting the first `train_fraction` of intervals in training."""
    if not 0 < train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)")
    k = int(train_fraction * m.shape[1])
    return to_iso(m.interval_starts[k])


def ingest_events(events, segments, interval_len_min=5, start=None, end=None,
                  max_trip_hr=DEFAULT_MAX_TRIP_HR):
    """Detection events to a travel time matrix, one row per segment.

    Without `start`/`end` the timeline spans the first to the last
    matched arrival. Returns the matrix and the per-segment match stats.
    """
    if not segments:
        raise ConfigError("no segments to ingest")
    tables, stats = [], {}
    for seg in segments:
        table, st = match_trip_table(events, seg, max_trip_hr)
        tables.append(table)
        stats[seg.segment_id] = st
    step = int(interval_len_min) * 60
    if start is not None:
        start = parse_instant(start)
        start -= start % step
    end = parse_instant(end) if end is not None else None
    records = aggregate_travel_times(tables, interval_len_min, start, end)
    if not records:
        raise NoData("no trips matched on any segment")
    lo = min(r.interval_start for r in records)
    hi = max(r.interval_start for r in records) + step
    ids = [s.segment_id for s in segments]
    return build_matrix(records, ids, lo if start is None else start,
                        hi if end is None else end, interval_len_min), stats
