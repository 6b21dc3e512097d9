"""Time-space travel time matrices and supervised windowing.

A matrix row is a road segment (rows follow the physical order of the
corridor), a column is a reporting interval. A training sample is an
``x`` by ``y + 1`` block ending at anchor interval ``j`` whose target is
the travel time of one segment at ``j + 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, InvalidArgument
from .traffic_core import IntervalRecord

FILL_POLICIES = ("forward-fill", "segment-median", "drop")


def to_iso(ts) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_instant(value) -> int:
    """Unix seconds from an ISO-8601 string, a date, or a number. Naive means UTC."""
    if isinstance(value, (int, float, np.integer, np.floating)):
        return int(value)
    if isinstance(value, datetime):
        dt = value
    else:
        text = str(value).strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        try:
            dt = datetime.fromisoformat(text)
        except ValueError:
            raise InvalidArgument(f"not an ISO-8601 instant: {value!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


@dataclass(frozen=True)
class TimeSpaceMatrix:
    segment_ids: tuple
    interval_starts: np.ndarray
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        starts = np.array(self.interval_starts, dtype=np.int64)
        if values.shape != (len(self.segment_ids), len(starts)) or mask.shape != values.shape:
            raise InvalidArgument("matrix shape does not match segments x intervals")
        if len(starts) > 1:
            steps = np.diff(starts)
            if np.any(steps != steps[0]) or steps[0] <= 0:
                raise InvalidArgument("interval spacing must be uniform and increasing")
        observed = values[mask]
        if not np.all(np.isfinite(observed) & (observed > 0)):
            raise InvalidArgument("observed cells must be finite and positive")
        values[~mask] = np.nan
        for arr in (values, mask, starts):
            arr.setflags(write=False)
        object.__setattr__(self, "segment_ids", tuple(self.segment_ids))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "interval_starts", starts)

    @property
    def shape(self):
        return self.values.shape

    @property
    def step_s(self) -> Optional[int]:
        if len(self.interval_starts) < 2:
            return None
        return int(self.interval_starts[1] - self.interval_starts[0])


def build_matrix(records: Sequence[IntervalRecord], segments: Sequence[str],
                 start, end, interval_len_min: int = 5) -> TimeSpaceMatrix:
    """Assemble interval records into a matrix covering ``[start, end)``.

    Records for segments outside `segments`, or whose interval length or
    alignment disagree with the timeline, raise :class:`DataError` listing
    the offending entries.
    """
    step = int(interval_len_min) * 60
    if step <= 0:
        raise InvalidArgument("interval length must be positive")
    start, end = parse_instant(start), parse_instant(end)
    n = max(0, -(-(end - start) // step))
    index = {s: i for i, s in enumerate(segments)}
    if len(index) != len(segments):
        raise InvalidArgument("segment ids must be unique")
    values = np.full((len(segments), n), np.nan)
    mask = np.zeros((len(segments), n), dtype=bool)

    unknown = sorted({r.segment_id for r in records if r.segment_id not in index})
    if unknown:
        raise DataError(f"records reference unknown segments: {unknown}")
    bad_step = [r for r in records if r.interval_len_min * 60 != step]
    if bad_step:
        raise DataError(f"{len(bad_step)} records have interval length != {interval_len_min} min")
    for r in records:
        offset = r.interval_start - start
        if offset % step:
            raise DataError(f"record at {to_iso(r.interval_start)} is not aligned to the timeline")
        j = offset // step
        if 0 <= j < n and r.trip_count > 0 and r.mean_travel_time_hr is not None:
            values[index[r.segment_id], j] = r.mean_travel_time_hr
            mask[index[r.segment_id], j] = True
    return TimeSpaceMatrix(tuple(segments), start + step * np.arange(n), values, mask)


def fill_missing(m: TimeSpaceMatrix, policy: str = "drop") -> TimeSpaceMatrix:
    if policy not in FILL_POLICIES:
        raise InvalidArgument(f"unknown fill policy {policy!r}; expected one of {FILL_POLICIES}")
    if policy == "drop" or m.mask.all():
        return m
    values = m.values.copy()
    mask = m.mask.copy()
    if policy == "forward-fill":
        for i in range(values.shape[0]):
            last = np.nan
            for j in range(values.shape[1]):
                if mask[i, j]:
                    last = values[i, j]
                elif not math.isnan(last):
                    values[i, j] = last
                    mask[i, j] = True
    else:
        for i in range(values.shape[0]):
            if mask[i].any():
                values[i, ~mask[i]] = np.median(values[i, mask[i]])
                mask[i] = True
    return TimeSpaceMatrix(m.segment_ids, m.interval_starts, values, mask)


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationParams:
    """Min-max scaling bounds in hours."""

    t_min: float
    t_max: float

    def __post_init__(self):
        if not (math.isfinite(self.t_min) and math.isfinite(self.t_max)) or not self.t_max > self.t_min:
            raise InvalidArgument(f"degenerate normalisation bounds [{self.t_min}, {self.t_max}]")

    @classmethod
    def from_training(cls, values, margin: float = 0.05) -> "NormalizationParams":
        """Observed training range widened by `margin` of its width on each side.

        A constant training set has no width; its value is then widened by
        `margin` of its magnitude instead.
        """
        v = np.asarray(values, dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0:
            raise InvalidArgument("no finite training values to normalise on")
        lo, hi = float(v.min()), float(v.max())
        pad = margin * (hi - lo)
        if pad == 0:
            pad = margin * abs(hi) or margin
        return cls(lo - pad, hi + pad)

    def normalize(self, values):
        return (np.asarray(values, dtype=float) - self.t_min) / (self.t_max - self.t_min)

    def denormalize(self, values):
        return np.asarray(values, dtype=float) * (self.t_max - self.t_min) + self.t_min

    def to_dict(self):
        return {"t_min": self.t_min, "t_max": self.t_max}


def normalize(m, params: NormalizationParams):
    """Scale a matrix (or any array of hours) into the unit interval."""
    if isinstance(m, TimeSpaceMatrix):
        return params.normalize(m.values)
    return params.normalize(m)


def denormalize(value, params: NormalizationParams):
    out = params.denormalize(value)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingSample:
    window: np.ndarray
    target: float
    target_segment_index: int
    anchor_interval: int
    anchor_start: int
    target_start: int
    segment_id: str = ""


def _valid_anchors(m: TimeSpaceMatrix, rows: slice, y: int, target_row: int, require_target: bool):
    ok = m.mask[rows].all(axis=0).astype(np.int64)
    n = m.shape[1]
    if n < y + 2:
        return np.empty(0, dtype=np.int64)
    csum = np.concatenate(([0], np.cumsum(ok)))
    if require_target:
        anchors = np.arange(y, n - 1)
        full = (csum[anchors + 1] - csum[anchors - y]) == y + 1
        full &= m.mask[target_row, anchors + 1]
    else:
        # the last column can anchor a forecast of the interval after the matrix
        anchors = np.arange(y, n)
        full = (csum[anchors + 1] - csum[anchors - y]) == y + 1
    return anchors[full]


def window_samples(m: TimeSpaceMatrix, x: int, y: int, z: int, first_segment: int = 0,
                   require_target: bool = True) -> list[TrainingSample]:
    """Slice every complete ``x`` by ``y + 1`` window out of `m`.

    Windows take segments ``first_segment .. first_segment + x - 1``;
    columns run oldest to newest so the anchor is the last column. `z`
    indexes the target segment inside the window. With
    ``require_target=False`` windows whose next value is missing are
    emitted too, with a NaN target (used for forecasting); that includes
    the window ending at the last column, whose target lies one step past
    the matrix.
    """
    n_seg, n_int = m.shape
    if x < 1 or y < 0:
        raise InvalidArgument("need x >= 1 and y >= 0")
    if first_segment < 0 or first_segment + x > n_seg:
        raise InvalidArgument(f"x={x} segments from {first_segment} exceed {n_seg} rows")
    if y + 2 > n_int:
        raise InvalidArgument(f"y={y} needs at least {y + 2} intervals, matrix has {n_int}")
    if not 0 <= z < x:
        raise InvalidArgument(f"target index z={z} outside window of {x} segments")
    rows = slice(first_segment, first_segment + x)
    target_row = first_segment + z
    anchors = _valid_anchors(m, rows, y, target_row, require_target)
    starts = m.interval_starts
    seg_id = m.segment_ids[target_row]
    samples = []
    step = m.step_s
    for j in anchors:
        window = m.values[rows, j - y:j + 1].copy()
        window.setflags(write=False)
        target = float(m.values[target_row, j + 1]) if j + 1 < n_int else float("nan")
        samples.append(TrainingSample(
            window, target, z, int(j), int(starts[j]), int(starts[j]) + step, seg_id,
        ))
    return samples


def stack_samples(samples: Sequence[TrainingSample]):
    """Windows as an ``(n, x, y+1)`` array and targets as ``(n,)``."""
    if not samples:
        raise InvalidArgument("no samples to stack")
    X = np.stack([s.window for s in samples])
    t = np.array([s.target for s in samples], dtype=float)
    return X, t


def split_by_date(samples: Sequence[TrainingSample], boundary):
    """Train/test partition: a sample is test iff its target interval starts at or after `boundary`."""
    b = parse_instant(boundary)
    train = [s for s in samples if s.target_start < b]
    test = [s for s in samples if s.target_start >= b]
    return train, test


# ---------------------------------------------------------------------------
# CSV interface
# ---------------------------------------------------------------------------


def write_matrix_csv(m: TimeSpaceMatrix, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id"] + [to_iso(t) for t in m.interval_starts])
        for i, seg in enumerate(m.segment_ids):
            w.writerow([seg] + [repr(float(v)) if ok else "" for v, ok in zip(m.values[i], m.mask[i])])


def read_matrix_csv(path) -> TimeSpaceMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "segment_id":
        raise DataError(f"{path}: first header cell must be segment_id")
    try:
        starts = [parse_instant(h) for h in rows[0][1:]]
    except InvalidArgument as exc:
        raise DataError(f"{path}: {exc}") from None
    segs, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(starts) + 1:
            raise DataError(f"{path}:{lineno}: expected {len(starts) + 1} cells, got {len(row)}")
        segs.append(row[0])
        try:
            values.append([float(c) if c.strip() else np.nan for c in row[1:]])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    values = np.array(values, dtype=float).reshape(len(segs), len(starts))
    mask = np.isfinite(values)
    try:
        return TimeSpaceMatrix(tuple(segs), np.array(starts, dtype=np.int64), values, mask)
    except InvalidArgument as exc:
        raise DataError(f"{path}: {exc}") from None
