"""Traffic characteristics and eTag trip reconstruction.

Units used throughout:
    flow Q [car/hr], speed U [km/hr], density K [car/km],
    distance D [km], travel time T [hr], timestamps [unix seconds].

Bulk detection data is held column-wise in :class:`EventTable` so that
months of reads can be matched without building one object per read.
The list-of-dataclass forms (:class:`DetectionEvent`, :class:`Trip`) are
kept for small inputs and tests.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import DataError, DivisionDegenerate, InvalidArgument, NoData

SECONDS_PER_HOUR = 3600.0
DEFAULT_MAX_TRIP_HR = 4.0


# ---------------------------------------------------------------------------
# traffic characteristics
# ---------------------------------------------------------------------------


def compute_flow(vehicle_count, interval_len_min):
    """Hourly flow rate from a count over an interval of `interval_len_min` minutes."""
    if interval_len_min <= 0:
        raise InvalidArgument(f"interval length must be positive, got {interval_len_min}")
    if vehicle_count < 0:
        raise InvalidArgument(f"vehicle count must be nonnegative, got {vehicle_count}")
    return vehicle_count * (60 / interval_len_min)


def compute_time_mean_speed(instant_speeds):
    """Arithmetic mean of spot speeds measured at one location."""
    speeds = np.asarray(list(instant_speeds), dtype=float)
    if speeds.size == 0:
        raise NoData("time mean speed needs at least one speed reading")
    if np.any(speeds < 0) or not np.all(np.isfinite(speeds)):
        raise InvalidArgument("speeds must be finite and nonnegative")
    return float(speeds.mean())


def estimate_density(flow, tms):
    """Density K = Q / U_t. Stopped traffic (tms <= 0) has no estimate."""
    if tms <= 0:
        raise DivisionDegenerate(f"time mean speed must be positive, got {tms}")
    return flow / tms


def estimate_travel_time(distance_km, sms):
    """Travel time T = D / U_s in hours."""
    if sms <= 0:
        raise DivisionDegenerate(f"space mean speed must be positive, got {sms}")
    if distance_km <= 0:
        raise InvalidArgument(f"distance must be positive, got {distance_km}")
    return distance_km / sms


def compute_space_mean_speed(distance_km, travel_time_hr):
    """Space mean speed U_s = D / T."""
    if distance_km <= 0 or travel_time_hr <= 0:
        raise InvalidArgument("distance and travel time must both be positive")
    return distance_km / travel_time_hr


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionEvent:
    detector_id: str
    vehicle_tag: str
    timestamp: float

    def __post_init__(self):
        if not self.detector_id or not self.vehicle_tag:
            raise InvalidArgument("detector id and vehicle tag must be non-empty")
        if not math.isfinite(self.timestamp):
            raise InvalidArgument(f"timestamp must be finite, got {self.timestamp}")


@dataclass(frozen=True)
class SegmentDef:
    segment_id: str
    origin_detector: str
    dest_detector: str
    length_km: float

    def __post_init__(self):
        if not self.length_km > 0:
            raise InvalidArgument(f"segment {self.segment_id}: length must be positive")
        if self.origin_detector == self.dest_detector:
            raise InvalidArgument(
                f"segment {self.segment_id}: origin and destination detector coincide"
            )


@dataclass(frozen=True)
class Trip:
    vehicle_tag: str
    segment_id: str
    depart: float
    arrive: float

    def __post_init__(self):
        if not self.arrive > self.depart:
            raise InvalidArgument("trip must arrive after it departs")

    @property
    def travel_time_hr(self):
        return (self.arrive - self.depart) / SECONDS_PER_HOUR


@dataclass(frozen=True)
class IntervalRecord:
    segment_id: str
    interval_start: int
    interval_len_min: int
    mean_travel_time_hr: Optional[float]
    trip_count: int


@dataclass
class EventTable:
    """Column-wise detection events.

    `detector` and `tag` hold integer codes into `detector_names` and
    `tag_names`. `tag_names` may be None when tags are plain integers
    (synthetic data), in which case the code is the tag.
    """

    detector: np.ndarray
    tag: np.ndarray
    timestamp: np.ndarray
    detector_names: tuple
    tag_names: Optional[np.ndarray] = None

    def __post_init__(self):
        self.detector = np.asarray(self.detector, dtype=np.int32)
        self.tag = np.asarray(self.tag, dtype=np.int64)
        self.timestamp = np.asarray(self.timestamp, dtype=float)
        n = len(self.timestamp)
        if len(self.detector) != n or len(self.tag) != n:
            raise InvalidArgument("event columns differ in length")
        if n and not np.all(np.isfinite(self.timestamp)):
            raise InvalidArgument("event timestamps must be finite")
        self.detector_names = tuple(self.detector_names)

    def __len__(self):
        return len(self.timestamp)

    def tag_label(self, code):
        if self.tag_names is None:
            return str(int(code))
        return str(self.tag_names[code])

    @classmethod
    def from_events(cls, events: Iterable[DetectionEvent]) -> "EventTable":
        events = list(events)
        if not events:
            return cls(np.empty(0), np.empty(0), np.empty(0), ())
        det_names, det_codes = np.unique([e.detector_id for e in events], return_inverse=True)
        tag_names, tag_codes = np.unique([e.vehicle_tag for e in events], return_inverse=True)
        ts = [e.timestamp for e in events]
        return cls(det_codes, tag_codes, ts, tuple(det_names.tolist()), tag_names)

    def to_events(self) -> list[DetectionEvent]:
        return [
            DetectionEvent(self.detector_names[d], self.tag_label(t), float(ts))
            for d, t, ts in zip(self.detector, self.tag, self.timestamp)
        ]

    @classmethod
    def concat(cls, tables: Sequence["EventTable"]) -> "EventTable":
        """Concatenate tables with integer tags, remapping detector codes."""
        names: list[str] = []
        for t in tables:
            if t.tag_names is not None:
                raise InvalidArgument("concat supports integer-tagged tables only")
            for name in t.detector_names:
                if name not in names:
                    names.append(name)
        index = {n: i for i, n in enumerate(names)}
        dets, tags, stamps = [], [], []
        for t in tables:
            remap = np.array([index[n] for n in t.detector_names], dtype=np.int32)
            dets.append(remap[t.detector] if len(t) else t.detector)
            tags.append(t.tag)
            stamps.append(t.timestamp)
        if not tables:
            return cls(np.empty(0), np.empty(0), np.empty(0), ())
        return cls(np.concatenate(dets), np.concatenate(tags), np.concatenate(stamps), tuple(names))


@dataclass
class TripTable:
    """Column-wise trips on one segment, sorted by departure."""

    segment_id: str
    tag: np.ndarray
    depart: np.ndarray
    arrive: np.ndarray

    def __len__(self):
        return len(self.depart)

    @property
    def travel_time_hr(self):
        return (self.arrive - self.depart) / SECONDS_PER_HOUR


@dataclass
class MatchStats:
    """Diagnostics tally of one matching run."""

    origin_reads: int = 0
    dest_reads: int = 0
    matched: int = 0
    dropped_origin: int = 0
    dropped_dest: int = 0
    too_long: int = 0
    foreign_reads: int = 0
    fallback_tags: int = field(default=0, repr=False)


# ---------------------------------------------------------------------------
# trip matching
# ---------------------------------------------------------------------------


def _greedy_pairs(origins, dests, max_s):
    """Reference greedy pairing for one vehicle.

    `origins` and `dests` are ascending timestamps. Each origin read takes
    the earliest later destination read still unused; if that read lies
    more than `max_s` after it the origin read is discarded. Returns
    index pairs and the number of origins discarded for length.
    """
    pairs = []
    too_long = 0
    ptr = 0
    for i, o in enumerate(origins):
        while ptr < len(dests) and dests[ptr] <= o:
            ptr += 1
        if ptr == len(dests):
            break
        if dests[ptr] - o > max_s:
            too_long += 1
            continue
        pairs.append((i, ptr))
        ptr += 1
    return pairs, too_long


def _group_running_min(values, group_ids):
    """Running minimum of `values` restarting at every group boundary.

    Works in place on `values`.
    """
    span = int(np.abs(values).max()) + 1 if len(values) else 1
    offset = (2 * span + 1) * group_ids
    values -= offset
    np.minimum.accumulate(values, out=values)
    values += offset
    return values


def _is_key_sorted(tag, ts, is_origin):
    # (tag, timestamp, destination-before-origin) order; checked blockwise to
    # keep temporaries small on large inputs
    block = 1 << 20
    for lo in range(0, len(ts) - 1, block):
        hi = min(lo + block + 1, len(ts))
        dtag = np.diff(tag[lo:hi])
        dts = np.diff(ts[lo:hi])
        dorig = np.diff(is_origin[lo:hi].view(np.int8))
        if np.any(dtag < 0) or not np.all((dtag > 0) | (dts > 0) | ((dts == 0) & (dorig >= 0))):
            return False
    return True


def _match_arrays(tag, ts, is_origin, max_s):
    """Vectorised FIFO matching. Returns (origin_idx, dest_idx, too_long, n_fallback).

    Indices refer to the input arrays. Within one tag, queued origin reads
    are served first-in first-out by destination reads, which is the same
    pairing as serving each origin with the earliest free later read.
    Tags where some pair would exceed `max_s` are re-run through the
    reference loop so that discards behave exactly as specified.
    """
    n = len(ts)
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, 0, 0

    # destination reads sort before origin reads at the same instant: the
    # pairing needs a strictly later destination.
    is_origin = np.ascontiguousarray(is_origin, dtype=bool)
    if _is_key_sorted(tag, ts, is_origin):
        order = None
        t_tag, t_ts, t_orig = tag, ts, is_origin
    else:
        order = np.lexsort((is_origin, ts, tag))
        t_tag, t_ts, t_orig = tag[order], ts[order], is_origin[order]

    new_group = np.empty(n, dtype=bool)
    new_group[0] = True
    np.not_equal(t_tag[1:], t_tag[:-1], out=new_group[1:])
    del t_tag
    group_ids = np.cumsum(new_group, dtype=np.int64)
    group_ids -= 1
    group_starts = np.flatnonzero(new_group)

    # queue length of waiting origin reads, per tag
    walk = t_orig.astype(np.int64)
    walk *= 2
    walk -= 1
    np.cumsum(walk, out=walk)
    prefix = np.concatenate(([0], walk[group_starts[1:] - 1]))
    walk -= prefix[group_ids]
    del prefix
    runmin = _group_running_min(walk.copy(), group_ids)
    np.minimum(runmin, 0, out=runmin)
    walk -= runmin                       # queue length after each read
    queue_before = runmin                # reuse the buffer
    queue_before[0] = 0
    queue_before[1:] = walk[:-1]
    queue_before[new_group] = 0
    del walk, new_group

    matched_dest = queue_before > 0
    del queue_before
    matched_dest &= ~t_orig
    d_pos = np.flatnonzero(matched_dest)
    del matched_dest
    n_groups = len(group_starts)
    n_matched_per_group = np.bincount(group_ids[d_pos], minlength=n_groups)

    orig_pos = np.flatnonzero(t_orig)
    orig_group = group_ids[orig_pos]
    first_orig = np.searchsorted(orig_pos, group_starts)
    orig_rank = np.arange(len(orig_pos))
    orig_rank -= first_orig[orig_group]
    o_pos = orig_pos[orig_rank < n_matched_per_group[orig_group]]
    del orig_pos, orig_group, orig_rank, first_orig

    gap = t_ts[d_pos] - t_ts[o_pos]
    bad_groups = np.unique(group_ids[o_pos[gap > max_s]])
    del gap
    too_long = 0
    if len(bad_groups):
        bad = np.zeros(n_groups, dtype=bool)
        bad[bad_groups] = True
        keep = ~bad[group_ids[o_pos]]
        o_pos, d_pos = o_pos[keep], d_pos[keep]
        extra_o, extra_d = [], []
        group_ends = np.append(group_starts[1:], n)
        for g in bad_groups:
            lo, hi = group_starts[g], group_ends[g]
            idx = np.arange(lo, hi)
            oi = idx[t_orig[lo:hi]]
            di = idx[~t_orig[lo:hi]]
            pairs, tl = _greedy_pairs(t_ts[oi], t_ts[di], max_s)
            too_long += tl
            extra_o.extend(oi[p] for p, _ in pairs)
            extra_d.extend(di[q] for _, q in pairs)
        o_pos = np.concatenate([o_pos, np.asarray(extra_o, dtype=np.int64)])
        d_pos = np.concatenate([d_pos, np.asarray(extra_d, dtype=np.int64)])
    if order is None:
        return o_pos, d_pos, too_long, len(bad_groups)
    return order[o_pos], order[d_pos], too_long, len(bad_groups)


def match_trip_table(events: EventTable, segment: SegmentDef,
                     max_trip_hr: float = DEFAULT_MAX_TRIP_HR):
    """Pair origin and destination reads of `segment` into trips.

    Returns ``(TripTable, MatchStats)``. Reads at other detectors are
    ignored and counted as foreign.
    """
    if max_trip_hr <= 0:
        raise InvalidArgument("maximum trip duration must be positive")
    names = events.detector_names
    o_code = names.index(segment.origin_detector) if segment.origin_detector in names else -1
    d_code = names.index(segment.dest_detector) if segment.dest_detector in names else -1
    at_origin = events.detector == o_code
    at_dest = events.detector == d_code
    relevant = at_origin | at_dest
    sel = np.flatnonzero(relevant)

    stats = MatchStats(
        origin_reads=int(at_origin.sum()),
        dest_reads=int(at_dest.sum()),
        foreign_reads=int(len(events) - len(sel)),
    )
    max_s = max_trip_hr * SECONDS_PER_HOUR
    if len(sel) == len(events):
        del sel
        o_idx, d_idx, too_long, n_fb = _match_arrays(events.tag, events.timestamp, at_origin, max_s)
    else:
        o_idx, d_idx, too_long, n_fb = _match_arrays(
            events.tag[sel], events.timestamp[sel], at_origin[sel], max_s
        )
        o_idx, d_idx = sel[o_idx], sel[d_idx]
    stats.matched = len(o_idx)
    stats.dropped_origin = stats.origin_reads - stats.matched
    stats.dropped_dest = stats.dest_reads - stats.matched
    stats.too_long = too_long
    stats.fallback_tags = n_fb

    depart = events.timestamp[o_idx]
    order = np.lexsort((events.tag[o_idx], depart))
    table = TripTable(
        segment.segment_id,
        events.tag[o_idx][order],
        depart[order],
        events.timestamp[d_idx][order],
    )
    return table, stats


def match_trips(events, segment: SegmentDef, max_trip_hr: float = DEFAULT_MAX_TRIP_HR,
                stats: Optional[MatchStats] = None) -> list[Trip]:
    """List form of :func:`match_trip_table`.

    `events` may be a list of :class:`DetectionEvent` or an
    :class:`EventTable`. Pass a :class:`MatchStats` to receive the tally.
    """
    table = events if isinstance(events, EventTable) else EventTable.from_events(events)
    trips, tally = match_trip_table(table, segment, max_trip_hr)
    if stats is not None:
        stats.__dict__.update(tally.__dict__)
    return [
        Trip(table.tag_label(t), segment.segment_id, float(a), float(b))
        for t, a, b in zip(trips.tag, trips.depart, trips.arrive)
    ]


# ---------------------------------------------------------------------------
# interval aggregation
# ---------------------------------------------------------------------------


def _check_interval(interval_len_min):
    if interval_len_min <= 0 or 60 % interval_len_min:
        raise InvalidArgument(f"interval length {interval_len_min} min must divide 60")
    return int(interval_len_min) * 60


def bucket_sums(arrive, travel_time_hr, step_s, start, n_intervals):
    """Per-interval (sum, count) of travel times, bucketed by arrival time."""
    idx = np.floor((np.asarray(arrive) - start) / step_s).astype(np.int64)
    inside = (idx >= 0) & (idx < n_intervals)
    sums = np.bincount(idx[inside], weights=np.asarray(travel_time_hr)[inside], minlength=n_intervals)
    counts = np.bincount(idx[inside], minlength=n_intervals)
    return sums, counts


def aggregate_travel_times(trips: Union[Sequence[Trip], TripTable, Sequence[TripTable]],
                           interval_len_min: int = 5,
                           start: Optional[int] = None,
                           end: Optional[int] = None) -> list[IntervalRecord]:
    """Mean travel time per (segment, interval), trips bucketed by arrival.

    Intervals are aligned to multiples of `interval_len_min` since the
    unix epoch. The emitted range is ``[start, end)`` when given, else it
    spans the first to the last arrival over all trips. Intervals with no
    arrivals are emitted with ``trip_count == 0`` and no mean.
    """
    step = _check_interval(interval_len_min)
    if isinstance(trips, TripTable):
        tables = [trips]
    elif trips and all(isinstance(t, TripTable) for t in trips):
        tables = list(trips)
    else:
        by_seg: dict[str, list[Trip]] = {}
        for t in trips:
            by_seg.setdefault(t.segment_id, []).append(t)
        tables = [
            TripTable(seg, np.zeros(len(ts), dtype=np.int64),
                      np.array([t.depart for t in ts]), np.array([t.arrive for t in ts]))
            for seg, ts in by_seg.items()
        ]
    tables = [t for t in tables if len(t)] if start is None or end is None else tables
    if start is not None and start % step:
        raise InvalidArgument("start must be aligned to the interval length")
    if start is None or end is None:
        if not tables:
            return []
        lo = min(float(t.arrive.min()) for t in tables)
        hi = max(float(t.arrive.max()) for t in tables)
        start = int(math.floor(lo / step) * step) if start is None else start
        end = int(math.floor(hi / step) * step + step) if end is None else end
    n = max(0, -(-(end - start) // step))

    records = []
    for table in sorted(tables, key=lambda t: t.segment_id):
        sums, counts = bucket_sums(table.arrive, table.travel_time_hr, step, start, n)
        for k in range(n):
            c = int(counts[k])
            records.append(IntervalRecord(
                table.segment_id, start + k * step, int(interval_len_min),
                float(sums[k] / c) if c else None, c,
            ))
    return records


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

EVENT_HEADER = ["detector_id", "vehicle_tag", "timestamp_unix_s"]
SEGMENT_HEADER = ["segment_id", "origin_detector", "dest_detector", "length_km"]


def read_events_csv(path) -> EventTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EVENT_HEADER:
            raise DataError(f"{path}: expected header {','.join(EVENT_HEADER)}, got {header}")
        dets, tags, stamps = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 or not row[0] or not row[1]:
                raise DataError(f"{path}:{lineno}: malformed row {row}")
            try:
                ts = float(row[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad timestamp {row[2]!r}") from None
            if not math.isfinite(ts):
                raise DataError(f"{path}:{lineno}: non-finite timestamp")
            dets.append(row[0])
            tags.append(row[1])
            stamps.append(ts)
    if not stamps:
        return EventTable(np.empty(0), np.empty(0), np.empty(0), ())
    det_names, det_codes = np.unique(dets, return_inverse=True)
    tag_names, tag_codes = np.unique(tags, return_inverse=True)
    return EventTable(det_codes, tag_codes, stamps, tuple(det_names.tolist()), tag_names)


def write_events_csv(events: Union[EventTable, Sequence[DetectionEvent]], path):
    table = events if isinstance(events, EventTable) else EventTable.from_events(events)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(EVENT_HEADER)
        names = table.detector_names
        for d, t, ts in zip(table.detector.tolist(), table.tag.tolist(), table.timestamp.tolist()):
            w.writerow([names[d], table.tag_label(t), repr(ts)])


def read_segments_csv(path) -> list[SegmentDef]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SEGMENT_HEADER:
            raise DataError(f"{path}: expected header {','.join(SEGMENT_HEADER)}")
        try:
            return [
                SegmentDef(r["segment_id"], r["origin_detector"], r["dest_detector"],
                           float(r["length_km"]))
                for r in reader
            ]
        except (ValueError, InvalidArgument) as exc:
            raise DataError(f"{path}: {exc}") from None


def write_segments_csv(segments: Sequence[SegmentDef], path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SEGMENT_HEADER)
        for s in segments:
            w.writerow([s.segment_id, s.origin_detector, s.dest_detector, repr(s.length_km)])
