"""Synthetic corridor traffic with upstream-moving congestion waves.

Segments are ordered upstream to downstream (vehicles drive from
segment 0 towards the last one). A congestion event starts on one
segment and spreads to the segments behind it, one segment every
``1 / wave_speed`` intervals, which gives the diagonal "slope" pattern
in the time-space matrix that a 2x2 filter can pick up.

Free-flow speeds come from the Greenshields closure u = vf (1 - k / kj)
evaluated at the density implied by the interval demand.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError
from .grid import TimeSpaceMatrix, parse_instant, to_iso
from .traffic_core import SECONDS_PER_HOUR, EventTable, SegmentDef

MIN_SPEED_KMH = 5.0
DEFAULT_START = parse_instant("2017-07-01T00:00:00Z")
INTERVALS_PER_DAY_5MIN = 288


def greenshields_speed(density, free_flow, jam_density):
    """Linear speed-density relation. Overfull densities clamp to 5 km/hr."""
    if density < 0:
        raise ConfigError(f"density must be nonnegative, got {density}")
    if density > jam_density:
        warnings.warn(f"density {density} above jam density {jam_density}; "
                      f"speed clamped to {MIN_SPEED_KMH} km/hr", RuntimeWarning, stacklevel=2)
        return MIN_SPEED_KMH
    return free_flow * (1.0 - density / jam_density)


def density_for_flow(flow, free_flow, jam_density):
    """Uncongested-branch density carrying `flow` car/hr (capped at capacity)."""
    capacity = free_flow * jam_density / 4.0
    flow = np.asarray(flow, dtype=float)
    over = flow > capacity
    if np.any(over):
        warnings.warn(f"{int(over.sum())} intervals exceed capacity {capacity:.0f} car/hr; "
                      "density held at critical", RuntimeWarning, stacklevel=2)
    ratio = np.minimum(flow / capacity, 1.0)
    return 0.5 * jam_density * (1.0 - np.sqrt(1.0 - ratio))


@dataclass(frozen=True)
class CongestionEvent:
    origin_segment_index: int
    start_interval: int
    duration_intervals: int
    severity: float
    wave_speed: float = 1.0

    def __post_init__(self):
        if not 0 < self.severity < 1:
            raise ConfigError(f"severity must lie in (0, 1), got {self.severity}")
        if self.duration_intervals < 1 or self.start_interval < 0 or self.origin_segment_index < 0:
            raise ConfigError("event indices must be nonnegative and duration positive")
        if not self.wave_speed > 0:
            raise ConfigError("wave speed must be positive")

    def arrival_delay(self, upstream_distance):
        """Intervals until the wave has travelled `upstream_distance` segments.

        The front advances floor(n * wave_speed) whole segments after n
        intervals, so fractional speeds accumulate.
        """
        if upstream_distance == 0:
            return 0
        return math.ceil(upstream_distance / self.wave_speed - 1e-9)


@dataclass
class ScenarioConfig:
    segments: list
    horizon: int
    interval_len_min: int = 5
    free_flow_speed: float = 90.0
    jam_density: float = 400.0
    demand_profile: Union[float, Sequence[float]] = 500.0
    congestion_events: list = field(default_factory=list)
    noise_sd_rel: float = 0.03
    penetration: float = 0.94
    seed: int = 0
    start: int = DEFAULT_START

    def __post_init__(self):
        self.segments = [s if isinstance(s, SegmentDef) else SegmentDef(**s) for s in self.segments]
        self.congestion_events = [
            e if isinstance(e, CongestionEvent) else CongestionEvent(**e)
            for e in self.congestion_events
        ]
        self.start = parse_instant(self.start)
        if not self.segments:
            raise ConfigError("scenario needs at least one segment")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.interval_len_min <= 0 or 60 % self.interval_len_min:
            raise ConfigError("interval length must divide 60")
        if self.start % (self.interval_len_min * 60):
            raise ConfigError("start must be aligned to the interval length")
        if self.free_flow_speed <= 0 or self.jam_density <= 0:
            raise ConfigError("free-flow speed and jam density must be positive")
        if not 0 <= self.penetration <= 1:
            raise ConfigError("penetration must lie in [0, 1]")
        if self.noise_sd_rel < 0:
            raise ConfigError("noise level must be nonnegative")
        if np.any(self.demand() < 0):
            raise ConfigError("demand must be nonnegative")
        for e in self.congestion_events:
            if e.origin_segment_index >= len(self.segments):
                raise ConfigError(f"event origin {e.origin_segment_index} out of range")

    def demand(self):
        """Vehicles per interval for each interval; a list profile repeats cyclically."""
        prof = np.atleast_1d(np.asarray(self.demand_profile, dtype=float))
        if prof.size == 0:
            raise ConfigError("empty demand profile")
        return np.resize(prof, self.horizon)

    @property
    def step_s(self):
        return self.interval_len_min * 60

    def to_dict(self):
        d = asdict(self)
        d["start"] = to_iso(self.start)
        if not np.isscalar(self.demand_profile):
            d["demand_profile"] = [float(v) for v in self.demand_profile]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        rand = d.pop("random_events", None)
        if "segments" not in d:
            raise ConfigError("scenario config needs 'segments'")
        if isinstance(d["segments"], int):
            d["segments"] = default_segments(d["segments"])
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if rand:
            rng = np.random.default_rng([cfg.seed, 3])
            extra = random_congestion_events(rng, len(cfg.segments), cfg.horizon,
                                             intervals_per_day=1440 // cfg.interval_len_min, **rand)
            cfg.congestion_events = list(cfg.congestion_events) + extra
        return cfg

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None


def default_segments(n, length_km=3.0):
    """`n` contiguous segments S1..Sn between detectors D0..Dn."""
    return [SegmentDef(f"S{i + 1}", f"D{i}", f"D{i + 1}", length_km) for i in range(n)]


def random_congestion_events(rng, n_segments, horizon, per_day=4.0, intervals_per_day=288,
                             severity=(0.3, 0.6), duration=(6, 24), wave_speeds=(1.0, 0.5),
                             origins=None):
    """Poisson-many events with uniformly drawn start, severity, duration and wave speed."""
    n = rng.poisson(per_day * horizon / intervals_per_day)
    origins = list(range(n_segments)) if origins is None else list(origins)
    events = []
    for _ in range(n):
        events.append(CongestionEvent(
            origin_segment_index=int(rng.choice(origins)),
            start_interval=int(rng.integers(0, horizon)),
            duration_intervals=int(rng.integers(duration[0], duration[1] + 1)),
            severity=float(rng.uniform(*severity)),
            wave_speed=float(rng.choice(wave_speeds)),
        ))
    events.sort(key=lambda e: (e.start_interval, e.origin_segment_index))
    return events


def severity_grid(config: ScenarioConfig):
    """Strongest speed reduction covering each (segment, interval) cell."""
    sev = np.zeros((len(config.segments), config.horizon))
    for e in config.congestion_events:
        for i in range(e.origin_segment_index, -1, -1):
            lo = e.start_interval + e.arrival_delay(e.origin_segment_index - i)
            hi = min(lo + e.duration_intervals, config.horizon)
            if lo < hi:
                np.maximum(sev[i, lo:hi], e.severity, out=sev[i, lo:hi])
    return sev


def base_speeds(config: ScenarioConfig):
    """Uncongested speed per interval from the demand profile (km/hr)."""
    flow = config.demand() * (60.0 / config.interval_len_min)
    k = density_for_flow(flow, config.free_flow_speed, config.jam_density)
    return config.free_flow_speed * (1.0 - k / config.jam_density)


def generate_scenario(config: ScenarioConfig) -> TimeSpaceMatrix:
    """Ground-truth travel time matrix (hours) for `config`."""
    rng = np.random.default_rng([config.seed, 1])
    speed = base_speeds(config)[None, :] * (1.0 - severity_grid(config))
    speed = np.maximum(speed, MIN_SPEED_KMH)
    lengths = np.array([s.length_km for s in config.segments])[:, None]
    tt = lengths / speed
    sd = config.noise_sd_rel
    if sd > 0:
        tt = tt * np.exp(sd * rng.standard_normal(tt.shape) - 0.5 * sd * sd)
    starts = config.start + config.step_s * np.arange(config.horizon)
    return TimeSpaceMatrix(tuple(s.segment_id for s in config.segments), starts, tt,
                           np.ones(tt.shape, dtype=bool))


TAG_STRIDE = 1 << 40


def emit_detection_events(truth: TimeSpaceMatrix, config: ScenarioConfig,
                          segments: Optional[Sequence[int]] = None) -> EventTable:
    """eTag reads of simulated vehicles whose trips end in each truth cell.

    Per cell, Poisson(demand) vehicles arrive uniformly over the interval;
    each carries a tag with probability `penetration`. A tagged vehicle
    yields an origin read and a destination read separated by the cell's
    travel time plus Gaussian jitter of sd ``noise_sd_rel * T``. Every
    segment draws from its own random stream, so `segments` selects a
    subset without changing the reads produced for it.
    """
    vals = np.asarray(truth.values)
    if not np.all(np.isfinite(vals[truth.mask])):
        raise ConfigError("truth matrix must be finite")
    if vals.shape != (len(config.segments), config.horizon):
        raise ConfigError("truth matrix does not match the scenario shape")
    demand = config.demand()
    step = config.step_s
    starts = np.asarray(truth.interval_starts, dtype=float)
    which = range(len(config.segments)) if segments is None else segments
    tables = []
    for i in which:
        seg = config.segments[i]
        rng = np.random.default_rng([config.seed, 2, i])
        counts = rng.poisson(demand)
        tagged = rng.binomial(counts, config.penetration)
        tagged[~truth.mask[i]] = 0
        cell = np.repeat(np.arange(config.horizon), tagged)
        n = len(cell)
        arrive = starts[cell] + rng.uniform(0.0, step, size=n)
        tt_s = vals[i, cell] * SECONDS_PER_HOUR
        if config.noise_sd_rel > 0:
            tt_s = tt_s * (1.0 + config.noise_sd_rel * rng.standard_normal(n))
            tt_s = np.maximum(tt_s, 0.01 * vals[i, cell] * SECONDS_PER_HOUR)
        depart = arrive - tt_s
        tag = i * TAG_STRIDE + np.arange(n, dtype=np.int64)
        ts = np.empty(2 * n)
        ts[0::2] = depart
        ts[1::2] = arrive
        det = np.tile(np.array([0, 1], dtype=np.int32), n)
        tables.append(EventTable(det, np.repeat(tag, 2), ts,
                                 (seg.origin_detector, seg.dest_detector)))
    if len(tables) == 1:
        return tables[0]
    return EventTable.concat(tables)
