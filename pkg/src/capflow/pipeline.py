"""Detector event ingestion and traffic-flow breakdown detection.

Raw per-vehicle radar records are filtered, aggregated into one-minute
intervals (harmonic mean speed, PCE intensity), and scanned by a state
machine that separates free-flow, discarded, and congested minutes. Each
free-flow minute contributes its trailing three-minute intensity as a
censored record; each detected breakdown contributes exactly one uncensored
record (the breakdown flow).
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import IO, Iterable, Iterator, Mapping

logger = logging.getLogger(__name__)

EVENT_HEADER = ("timestamp", "speed_kmh", "length_m", "valid")
MINUTE_HEADER = ("minute_start", "intensity_pce", "harmonic_speed_kmh",
                 "vehicle_count", "empty_flag")

# Sanity bounds for single-vehicle records; anything beyond is a detector glitch.
MAX_SPEED_KMH = 250.0
MAX_LENGTH_M = 30.0

MINUTE = timedelta(minutes=1)


class MalformedInputError(ValueError):
    """Input file cannot be interpreted (bad header, wrong schema)."""


@dataclass(frozen=True)
class VehicleEvent:
    """One per-vehicle detector record."""

    timestamp: datetime
    speed: float   # km/h
    length: float  # m
    valid: bool = True


@dataclass
class IngestStats:
    """Row accounting for one ingestion run."""

    rows: int = 0
    kept: int = 0
    invalid_flag: int = 0
    duplicates: int = 0
    out_of_bounds: int = 0
    malformed: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "rows": self.rows,
            "kept": self.kept,
            "invalid_flag": self.invalid_flag,
            "duplicates": self.duplicates,
            "out_of_bounds": self.out_of_bounds,
            "malformed": self.malformed,
        }


@dataclass(frozen=True)
class DetectionConfig:
    """Thresholds of the breakdown detection state machine.

    Speeds in km/h, windows in minutes, PCE threshold in metres.
    """

    breakdown_speed: float = 40.0
    discard_speed: float = 50.0
    recovery_speed: float = 70.0
    breakdown_window: int = 3
    recovery_window: int = 5
    pce_length_threshold: float = 9.0

    def __post_init__(self) -> None:
        if self.discard_speed < self.breakdown_speed:
            raise ValueError("discard_speed must be >= breakdown_speed")
        if self.recovery_speed <= self.discard_speed:
            raise ValueError("recovery_speed must be > discard_speed")
        if self.breakdown_window < 1 or self.recovery_window < 1:
            raise ValueError("window lengths must be positive")


@dataclass
class FlowInterval:
    """Aggregated flow interval (width 1, 3, or 5 minutes).

    ``mean_speed`` is the harmonic mean of individual speeds for width 1,
    and the arithmetic mean of the member minutes' harmonic means for wider
    intervals. It is None when no usable (positive) speed exists; the
    ``empty`` property marks intervals without any vehicle.
    """

    start: datetime
    width: int
    intensity: int
    mean_speed: float | None
    vehicle_count: int
    zero_speed_count: int = 0
    partial: bool = False

    @property
    def empty(self) -> bool:
        return self.vehicle_count == 0


@dataclass(frozen=True)
class BreakdownObservation:
    """Uncensored capacity record: the flow that preceded one breakdown."""

    breakdown_minute: datetime
    breakdown_flow: int
    shifted_back: bool = False


@dataclass
class IntensityHistogram:
    """Counts of retained free-flow interval records per integer intensity."""

    counts: dict[int, int] = field(default_factory=dict)
    bin_width: int = 1

    def total(self) -> int:
        return sum(self.counts.values())

    def levels(self) -> list[int]:
        return sorted(self.counts)

    def max_level(self) -> int:
        if not self.counts:
            raise ValueError("empty histogram has no levels")
        return max(self.counts)

    def min_level(self) -> int:
        if not self.counts:
            raise ValueError("empty histogram has no levels")
        return min(self.counts)


def build_histogram(records: Iterable[int]) -> IntensityHistogram:
    """Count record multiplicities per integer intensity level."""
    counts = Counter()
    for value in records:
        level = int(value)
        if level < 0:
            raise ValueError(f"negative intensity record: {value}")
        counts[level] += 1
    return IntensityHistogram(counts=dict(counts))


# --------------------------------------------------------------------------
# ingestion

def _parse_timestamp(text: str) -> datetime:
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_events(stream: IO[bytes] | IO[str]) -> tuple[list[VehicleEvent], IngestStats]:
    """Parse an event CSV, dropping invalid, duplicate, and implausible rows.

    Returns the retained events sorted by timestamp plus drop statistics.
    Malformed rows are skipped with a per-row diagnostic; an unusable header
    raises MalformedInputError.
    """
    data = stream.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = data.splitlines()
    if not lines:
        raise MalformedInputError("input is empty; expected a header row")
    header = next(csv.reader([lines[0].lstrip("﻿")]))
    if tuple(h.strip().lower() for h in header) != EVENT_HEADER:
        raise MalformedInputError(
            f"unexpected header {header!r}; expected {','.join(EVENT_HEADER)}"
        )

    stats = IngestStats()
    events: list[VehicleEvent] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        stats.rows += 1
        if line in seen:
            stats.duplicates += 1
            continue
        seen.add(line)
        fields = next(csv.reader([line]))
        if len(fields) != 4:
            stats.malformed += 1
            logger.warning("line %d: expected 4 fields, got %d", lineno, len(fields))
            continue
        try:
            ts = _parse_timestamp(fields[0])
            speed = float(fields[1])
            length = float(fields[2])
            valid = int(fields[3]) != 0
        except (ValueError, OverflowError) as exc:
            stats.malformed += 1
            logger.warning("line %d: %s", lineno, exc)
            continue
        if not valid:
            stats.invalid_flag += 1
            continue
        if not (0.0 <= speed <= MAX_SPEED_KMH) or not (0.0 <= length <= MAX_LENGTH_M):
            stats.out_of_bounds += 1
            logger.warning(
                "line %d: implausible record speed=%s km/h length=%s m", lineno, speed, length
            )
            continue
        events.append(VehicleEvent(timestamp=ts, speed=speed, length=length, valid=True))
    events.sort(key=lambda e: e.timestamp)
    stats.kept = len(events)
    return events, stats


# --------------------------------------------------------------------------
# aggregation

def _floor_minute(ts: datetime) -> datetime:
    return ts.replace(second=0, microsecond=0)


def aggregate_minutes(
    events: list[VehicleEvent], config: DetectionConfig | None = None
) -> list[FlowInterval]:
    """Aggregate events into a contiguous sequence of one-minute intervals.

    Intensity is in PCE: vehicles longer than the configured threshold count
    double. Speed is the harmonic mean; vehicles standing still are counted
    in the intensity but excluded from the mean (1/v is undefined at 0).
    """
    config = config or DetectionConfig()
    if not events:
        return []
    threshold = config.pce_length_threshold

    buckets: dict[datetime, list[VehicleEvent]] = {}
    for event in events:
        buckets.setdefault(_floor_minute(event.timestamp), []).append(event)

    first = _floor_minute(events[0].timestamp)
    last = _floor_minute(events[-1].timestamp)
    minutes: list[FlowInterval] = []
    current = first
    while current <= last:
        members = buckets.get(current, ())
        intensity = 0
        inv_speed_sum = 0.0
        positive_speeds = 0
        zero_speeds = 0
        for event in members:
            intensity += 2 if event.length > threshold else 1
            if event.speed > 0.0:
                inv_speed_sum += 1.0 / event.speed
                positive_speeds += 1
            else:
                zero_speeds += 1
        mean_speed = positive_speeds / inv_speed_sum if positive_speeds else None
        minutes.append(
            FlowInterval(
                start=current,
                width=1,
                intensity=intensity,
                mean_speed=mean_speed,
                vehicle_count=len(members),
                zero_speed_count=zero_speeds,
            )
        )
        current += MINUTE
    return minutes


def _check_contiguous(minutes: list[FlowInterval]) -> None:
    for prev, cur in zip(minutes, minutes[1:]):
        if cur.start - prev.start != MINUTE:
            raise ValueError(
                f"minute sequence not contiguous at {prev.start.isoformat()} -> "
                f"{cur.start.isoformat()}"
            )


def rolling_aggregate(minutes: list[FlowInterval], k: int) -> list[FlowInterval]:
    """Overlapping width-k aggregation (stride one minute).

    Intensities are summed, the speed is the arithmetic mean of the defined
    minute harmonic means, and any window containing an empty minute is
    flagged partial. Output length is max(0, len(minutes) - k + 1).
    """
    if k not in (3, 5):
        raise ValueError(f"aggregation width must be 3 or 5, got {k}")
    for m in minutes:
        if m.width != 1:
            raise ValueError("rolling_aggregate expects one-minute input intervals")
    _check_contiguous(minutes)
    out: list[FlowInterval] = []
    for i in range(len(minutes) - k + 1):
        window = minutes[i : i + k]
        speeds = [m.mean_speed for m in window if m.mean_speed is not None]
        out.append(
            FlowInterval(
                start=window[0].start,
                width=k,
                intensity=sum(m.intensity for m in window),
                mean_speed=sum(speeds) / len(speeds) if speeds else None,
                vehicle_count=sum(m.vehicle_count for m in window),
                zero_speed_count=sum(m.zero_speed_count for m in window),
                partial=any(m.empty for m in window),
            )
        )
    return out


# --------------------------------------------------------------------------
# breakdown detection

class MinuteClass(Enum):
    WARMUP = "warmup"        # no full trailing window inside the segment yet
    GAP = "gap"              # trailing window touches an empty/undefined minute
    HISTOGRAM = "histogram"  # censored record retained
    BREAKDOWN = "breakdown"  # owns the uncensored breakdown-flow record
    DISCARDED = "discarded"  # transient sub-discard-speed dip, record dropped
    CONGESTED = "congested"  # queue present, all records dropped


@dataclass
class DetectionResult:
    """Breakdown observations, censored histogram, and minute accounting.

    Every minute of the input is classified into exactly one MinuteClass, so
    histogram total + breakdown count + discarded + congested equals the
    number of eligible (non-warmup, non-gap) minutes.
    """

    breakdowns: list[BreakdownObservation]
    histogram: IntensityHistogram
    discarded_minutes: int
    congested_minutes: int
    warmup_minutes: int
    gap_minutes: int
    skipped_breakdowns: int
    ended_in_congestion: bool
    classes: list[MinuteClass]

    @property
    def eligible_minutes(self) -> int:
        return len(self.classes) - self.warmup_minutes - self.gap_minutes


def detect_breakdowns(
    minutes: list[FlowInterval], config: DetectionConfig | None = None
) -> DetectionResult:
    """Run the free-flow/congestion state machine over a minute sequence.

    Rules, in scan order at each minute t of a free-flow segment:

    * the trailing ``breakdown_window`` minutes form the record window; with
      fewer in-segment minutes t is warm-up, with an empty minute inside it
      is a gap minute;
    * a breakdown fires when the window's average speed drops below
      ``breakdown_speed``; the breakdown minute is the first minute of that
      window below the threshold, and the breakdown flow is the intensity of
      the window directly preceding it -- shifted one extra minute back when
      the minute just before the breakdown minute was already below
      ``discard_speed`` (queue already building);
    * otherwise the minute's record is kept as censored unless the minute's
      own speed is below ``discard_speed`` (brief dip, discarded);
    * once a breakdown fires, minutes from the breakdown minute onward are
      congested until the trailing ``recovery_window`` minutes (fully inside
      the congested episode) average above ``recovery_speed``; a new
      free-flow segment starts at the next minute.

    The minute whose censored record would duplicate the breakdown flow is
    reclassified as the breakdown owner, so no record is double counted.
    Breakdowns whose flow window is unavailable (dataset start, gap, or
    segment boundary) are skipped and counted.
    """
    config = config or DetectionConfig()
    _check_contiguous(minutes)
    k = config.breakdown_window
    rk = config.recovery_window
    n = len(minutes)

    speeds: list[float | None] = [m.mean_speed if not m.empty else None for m in minutes]
    classes: list[MinuteClass | None] = [None] * n
    breakdowns: list[BreakdownObservation] = []
    skipped = 0

    def window_speed(start: int, end: int) -> float | None:
        """Mean of minute speeds on [start, end], None if any is unusable."""
        values = speeds[start : end + 1]
        if any(v is None for v in values):
            return None
        return sum(values) / len(values)  # type: ignore[arg-type]

    def record_intensity(end: int) -> int | None:
        """Trailing-window intensity ending at `end`, None on any empty minute."""
        window = minutes[end - k + 1 : end + 1]
        if any(m.empty for m in window):
            return None
        return sum(m.intensity for m in window)

    def handle_breakdown(bm: int, detected: int, segment_start: int) -> None:
        nonlocal skipped
        shifted = (
            bm - 1 >= segment_start
            and speeds[bm - 1] is not None
            and speeds[bm - 1] < config.discard_speed  # type: ignore[operator]
        )
        source = bm - 2 if shifted else bm - 1
        flow = None
        if source - k + 1 >= segment_start and source >= 0:
            flow = record_intensity(source)
        if flow is None:
            skipped += 1
            logger.warning(
                "breakdown at %s skipped: no full free-flow window before it",
                minutes[bm].start.isoformat(),
            )
        else:
            classes[source] = MinuteClass.BREAKDOWN
            breakdowns.append(
                BreakdownObservation(
                    breakdown_minute=minutes[bm].start,
                    breakdown_flow=flow,
                    shifted_back=shifted,
                )
            )
        for u in range(bm, detected + 1):
            classes[u] = MinuteClass.CONGESTED

    congested = False
    segment_start = 0
    episode_start = 0
    for t in range(n):
        if congested:
            classes[t] = MinuteClass.CONGESTED
            if t - episode_start + 1 >= rk:
                avg = window_speed(t - rk + 1, t)
                if avg is not None and avg > config.recovery_speed:
                    congested = False
                    segment_start = t + 1
            continue

        if t - segment_start < k - 1:
            classes[t] = MinuteClass.WARMUP
            continue
        avg = window_speed(t - k + 1, t)
        if avg is None:
            classes[t] = MinuteClass.GAP
            continue
        if avg < config.breakdown_speed:
            bm = next(
                u for u in range(t - k + 1, t + 1)
                if speeds[u] is not None and speeds[u] < config.breakdown_speed
            )
            handle_breakdown(bm, t, segment_start)
            congested = True
            episode_start = bm
            continue
        if speeds[t] < config.discard_speed:  # type: ignore[operator]
            classes[t] = MinuteClass.DISCARDED
            continue
        intensity = record_intensity(t)
        if intensity is None:
            classes[t] = MinuteClass.GAP
        else:
            classes[t] = MinuteClass.HISTOGRAM

    if congested and n:
        logger.warning("dataset ends inside a congested period; tail discarded")

    final = [c for c in classes if c is not None]
    assert len(final) == n
    records = [
        record_intensity(t) for t, c in enumerate(final) if c is MinuteClass.HISTOGRAM
    ]
    histogram = build_histogram(r for r in records if r is not None)
    return DetectionResult(
        breakdowns=breakdowns,
        histogram=histogram,
        discarded_minutes=sum(c is MinuteClass.DISCARDED for c in final),
        congested_minutes=sum(c is MinuteClass.CONGESTED for c in final),
        warmup_minutes=sum(c is MinuteClass.WARMUP for c in final),
        gap_minutes=sum(c is MinuteClass.GAP for c in final),
        skipped_breakdowns=skipped,
        ended_in_congestion=congested,
        classes=final,
    )


# --------------------------------------------------------------------------
# interval CSV round-trip

def write_minutes_csv(minutes: Iterable[FlowInterval], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(MINUTE_HEADER)
    for m in minutes:
        writer.writerow([
            m.start.strftime("%Y-%m-%dT%H:%M:%SZ"),
            m.intensity,
            "" if m.mean_speed is None else repr(m.mean_speed),
            m.vehicle_count,
            int(m.empty),
        ])


def read_minutes_csv(stream: IO[str]) -> list[FlowInterval]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(h.strip().lower() for h in header) != MINUTE_HEADER:
        raise MalformedInputError(
            f"unexpected header {header!r}; expected {','.join(MINUTE_HEADER)}"
        )
    minutes = []
    for row in reader:
        if not row:
            continue
        minutes.append(
            FlowInterval(
                start=_parse_timestamp(row[0]),
                width=1,
                intensity=int(row[1]),
                mean_speed=float(row[2]) if row[2] else None,
                vehicle_count=int(row[3]),
            )
        )
    return minutes


def detection_to_dict(result: DetectionResult) -> dict:
    """JSON-ready view of a detection run."""
    return {
        "breakdowns": [
            {
                "minute": b.breakdown_minute.strftime("%Y-%m-%dT%H:%M:%SZ"),
                "flow_pce_3min": b.breakdown_flow,
                "shifted_back": b.shifted_back,
            }
            for b in result.breakdowns
        ],
        "histogram": [[level, result.histogram.counts[level]]
                      for level in result.histogram.levels()],
        "discarded_minutes": result.discarded_minutes,
        "congested_minutes": result.congested_minutes,
        "warmup_minutes": result.warmup_minutes,
        "gap_minutes": result.gap_minutes,
        "skipped_breakdowns": result.skipped_breakdowns,
        "ended_in_congestion": result.ended_in_congestion,
    }


def detection_from_dict(payload: Mapping) -> tuple[list[BreakdownObservation], IntensityHistogram]:
    """Inverse of detection_to_dict for the fields estimators consume."""
    breakdowns = [
        BreakdownObservation(
            breakdown_minute=_parse_timestamp(item["minute"]),
            breakdown_flow=int(item["flow_pce_3min"]),
            shifted_back=bool(item.get("shifted_back", False)),
        )
        for item in payload["breakdowns"]
    ]
    counts = {int(level): int(count) for level, count in payload["histogram"]}
    return breakdowns, IntensityHistogram(counts=counts)
