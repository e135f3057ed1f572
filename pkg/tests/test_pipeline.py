"""Ingestion, aggregation, and the breakdown detection state machine."""

from __future__ import annotations

import io
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from capflow.pipeline import (
    DetectionConfig,
    FlowInterval,
    MalformedInputError,
    MinuteClass,
    VehicleEvent,
    aggregate_minutes,
    build_histogram,
    detect_breakdowns,
    detection_from_dict,
    detection_to_dict,
    parse_events,
    read_minutes_csv,
    rolling_aggregate,
    write_minutes_csv,
)

from conftest import T0, make_minutes

HEADER = "timestamp,speed_kmh,length_m,valid\n"


def _parse(text: str):
    return parse_events(io.StringIO(HEADER + text))


class TestParseEvents:
    def test_well_formed_row(self):
        events, stats = _parse("2016-09-14T07:31:02.410,96.0,4.2,1\n")
        assert len(events) == 1
        assert events[0].speed == 96.0
        assert events[0].length == 4.2
        assert events[0].timestamp == datetime(
            2016, 9, 14, 7, 31, 2, 410000, tzinfo=timezone.utc
        )
        assert stats.kept == 1

    def test_byte_identical_duplicate_dropped(self):
        row = "2016-09-14T07:31:02.410,96.0,4.2,1\n"
        events, stats = _parse(row + row)
        assert len(events) == 1
        assert stats.duplicates == 1

    def test_negative_speed_rejected_with_diagnostic(self, caplog):
        with caplog.at_level("WARNING"):
            events, stats = _parse("2016-09-14T07:31:02,-5,4.2,1\n")
        assert events == []
        assert stats.out_of_bounds == 1
        assert any("line 2" in message for message in caplog.messages)

    def test_invalid_flag_dropped(self):
        events, stats = _parse("2016-09-14T07:31:02,96.0,4.2,0\n")
        assert events == []
        assert stats.invalid_flag == 1

    def test_sanity_bounds(self):
        events, stats = _parse(
            "2016-09-14T07:31:02,260.0,4.2,1\n2016-09-14T07:31:03,90.0,31.0,1\n"
        )
        assert events == []
        assert stats.out_of_bounds == 2

    def test_malformed_row_diagnostic_has_line_number(self, caplog):
        with caplog.at_level("WARNING"):
            events, stats = _parse(
                "2016-09-14T07:31:02,96.0,4.2,1\nnot-a-date,90,4,1\n"
            )
        assert len(events) == 1
        assert stats.malformed == 1
        assert any("line 3" in message for message in caplog.messages)

    def test_bad_header_fatal(self):
        with pytest.raises(MalformedInputError):
            parse_events(io.StringIO("time,speed\n1,2\n"))

    def test_bytes_stream_and_sorting(self):
        text = (
            HEADER
            + "2016-09-14T07:32:00,80.0,4.2,1\n"
            + "2016-09-14T07:31:00Z,90.0,4.2,1\n"
        )
        events, _ = parse_events(io.BytesIO(text.encode()))
        assert [e.speed for e in events] == [90.0, 80.0]


class TestAggregateMinutes:
    def _event(self, second, speed, length=4.0):
        return VehicleEvent(
            timestamp=T0 + timedelta(seconds=second), speed=speed, length=length
        )

    def test_harmonic_mean(self):
        minutes = aggregate_minutes([self._event(1, 80.0), self._event(2, 120.0)])
        assert len(minutes) == 1
        assert minutes[0].intensity == 2
        assert minutes[0].mean_speed == pytest.approx(96.0)

    def test_long_vehicle_counts_double(self):
        minutes = aggregate_minutes([self._event(1, 80.0, length=10.0)])
        assert minutes[0].intensity == 2
        assert minutes[0].vehicle_count == 1

    def test_nine_metre_vehicle_is_single_pce(self):
        minutes = aggregate_minutes([self._event(1, 80.0, length=9.0)])
        assert minutes[0].intensity == 1

    def test_empty_minute_flagged(self):
        events = [self._event(1, 80.0), self._event(125, 90.0)]
        minutes = aggregate_minutes(events)
        assert len(minutes) == 3
        assert minutes[1].empty
        assert minutes[1].intensity == 0
        assert minutes[1].mean_speed is None

    def test_zero_speed_vehicle_counted_not_averaged(self):
        minutes = aggregate_minutes([self._event(1, 0.0), self._event(2, 90.0)])
        assert minutes[0].intensity == 2
        assert minutes[0].mean_speed == pytest.approx(90.0)
        assert minutes[0].zero_speed_count == 1

    def test_all_zero_speed_minute_undefined(self):
        minutes = aggregate_minutes([self._event(1, 0.0)])
        assert minutes[0].mean_speed is None
        assert not minutes[0].empty

    def test_harmonic_at_most_arithmetic(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            speeds = rng.uniform(5.0, 140.0, size=rng.integers(2, 12))
            events = [self._event(i, s) for i, s in enumerate(speeds)]
            minute = aggregate_minutes(events)[0]
            assert minute.mean_speed <= speeds.mean() + 1e-12


class TestRollingAggregate:
    def test_intensity_sum(self):
        out = rolling_aggregate(make_minutes([90, 90, 90], [10, 12, 14]), 3)
        assert len(out) == 1
        assert out[0].intensity == 36
        assert out[0].start == T0

    def test_constant_speed(self):
        out = rolling_aggregate(make_minutes([90, 90, 90]), 3)
        assert out[0].mean_speed == pytest.approx(90.0)

    def test_window_count(self):
        assert len(rolling_aggregate(make_minutes([90] * 5), 3)) == 3

    def test_window_count_property(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(0, 12))
            k = int(rng.choice([3, 5]))
            out = rolling_aggregate(make_minutes([80] * n), k)
            assert len(out) == max(0, n - k + 1)

    def test_partial_flag_on_empty_member(self):
        out = rolling_aggregate(make_minutes([90, None, 90]), 3)
        assert out[0].partial
        assert out[0].mean_speed == pytest.approx(90.0)

    def test_short_input_empty_output(self):
        assert rolling_aggregate(make_minutes([90, 90]), 3) == []

    def test_non_contiguous_rejected(self):
        minutes = make_minutes([90, 90, 90])
        minutes[2] = FlowInterval(
            start=minutes[2].start + timedelta(minutes=5),
            width=1, intensity=10, mean_speed=90.0, vehicle_count=10,
        )
        with pytest.raises(ValueError, match="contiguous"):
            rolling_aggregate(minutes, 3)

    def test_bad_width_rejected(self):
        with pytest.raises(ValueError):
            rolling_aggregate(make_minutes([90] * 4), 2)


def _recompute_flow(minutes, observation, window=3):
    idx = next(
        i for i, m in enumerate(minutes) if m.start == observation.breakdown_minute
    )
    end = idx - 2 if observation.shifted_back else idx - 1
    return sum(m.intensity for m in minutes[end - window + 1 : end + 1])


class TestDetectBreakdowns:
    def test_constant_free_flow(self):
        minutes = make_minutes([90] * 10)
        result = detect_breakdowns(minutes)
        assert result.breakdowns == []
        assert result.histogram.total() == 8  # every eligible minute censored
        assert result.histogram.counts == {30: 8}

    def test_hand_trace(self):
        # trailing window (35, 20, 15) fires; first sub-40 minute is the 4th
        minutes = make_minutes([85, 84, 86, 35, 20, 15], [40, 41, 39, 38, 37, 36])
        result = detect_breakdowns(minutes)
        assert len(result.breakdowns) == 1
        b = result.breakdowns[0]
        assert b.breakdown_minute == minutes[3].start
        assert b.breakdown_flow == 40 + 41 + 39
        assert not b.shifted_back
        # the breakdown-flow record replaced the one censored record
        assert result.histogram.total() == 0
        assert result.congested_minutes == 3
        assert result.ended_in_congestion

    def test_brief_dip_discarded_without_breakdown(self):
        minutes = make_minutes([90, 90, 90, 45, 90, 90, 90])
        result = detect_breakdowns(minutes)
        assert result.breakdowns == []
        assert result.discarded_minutes == 1
        assert result.histogram.total() == 4

    def test_queue_building_shift(self):
        minutes = make_minutes([90, 90, 90, 48, 35, 20], [10, 11, 12, 13, 14, 15])
        result = detect_breakdowns(minutes)
        assert len(result.breakdowns) == 1
        b = result.breakdowns[0]
        assert b.shifted_back
        assert b.breakdown_minute == minutes[4].start
        assert b.breakdown_flow == 10 + 11 + 12
        assert result.discarded_minutes == 1  # the 48 km/h minute keeps its class

    def test_breakdown_without_history_skipped(self):
        minutes = make_minutes([90, 39, 39, 39])
        result = detect_breakdowns(minutes)
        assert result.breakdowns == []
        assert result.skipped_breakdowns == 1
        assert result.congested_minutes == 3

    def test_recovery_starts_new_segment(self):
        speeds = [90] * 5 + [30, 30, 30] + [95] * 7
        intensities = list(range(2, 17))
        minutes = make_minutes(speeds, intensities)
        result = detect_breakdowns(minutes)
        assert len(result.breakdowns) == 1
        # breakdown minute is the first 30 km/h minute (index 5); the flow
        # window covers minutes 2..4
        assert result.breakdowns[0].breakdown_flow == 4 + 5 + 6
        assert result.congested_minutes == 7
        assert result.warmup_minutes == 4  # two at the start, two after recovery
        assert result.histogram.total() == 3
        assert not result.ended_in_congestion

    def test_gap_window_excluded(self, caplog):
        minutes = make_minutes([90, 90, None, 90, 90, 90])
        result = detect_breakdowns(minutes)
        # minutes 2, 3, 4 have the empty minute in their trailing window
        assert result.gap_minutes == 3
        assert result.histogram.total() == 1

    def test_mid_congestion_tail_warns(self, caplog):
        minutes = make_minutes([90, 90, 90, 90, 30, 30, 30, 20])
        with caplog.at_level("WARNING"):
            result = detect_breakdowns(minutes)
        assert result.ended_in_congestion
        assert any("congested" in m for m in caplog.messages)

    def test_conservation_identity_random_traces(self):
        rng = np.random.default_rng(20160914)
        for _ in range(25):
            n = int(rng.integers(10, 160))
            speed = 90.0
            speeds, intensities = [], []
            for _ in range(n):
                speed = float(np.clip(speed + rng.normal(0, 18), 2.0, 130.0))
                speeds.append(None if rng.random() < 0.03 else speed)
                intensities.append(int(rng.integers(5, 60)))
            minutes = make_minutes(speeds, intensities)
            result = detect_breakdowns(minutes)
            assert (
                result.histogram.total()
                + len(result.breakdowns)
                + result.discarded_minutes
                + result.congested_minutes
                == result.eligible_minutes
            )
            assert len(result.classes) == n
            for observation in result.breakdowns:
                assert observation.breakdown_flow == _recompute_flow(minutes, observation)
                assert observation.breakdown_flow > 0

    def test_determinism(self):
        rng = np.random.default_rng(5)
        speeds = list(np.clip(rng.normal(80, 30, size=120), 2, 130))
        minutes = make_minutes(speeds)
        first = detection_to_dict(detect_breakdowns(minutes))
        second = detection_to_dict(detect_breakdowns(minutes))
        assert first == second


class TestHistogram:
    def test_counting(self):
        hist = build_histogram([120, 120, 80])
        assert hist.counts == {80: 1, 120: 2}
        assert hist.total() == 3

    def test_empty(self):
        hist = build_histogram([])
        assert hist.counts == {}
        assert hist.total() == 0

    def test_canonical_dataset_total(self, demand_profile):
        assert demand_profile.total() == 6486

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            build_histogram([-1])


class TestSerialization:
    def test_minutes_csv_roundtrip(self):
        minutes = make_minutes([90.5, None, 45.25], [12, 0, 9])
        out = io.StringIO()
        write_minutes_csv(minutes, out)
        back = read_minutes_csv(io.StringIO(out.getvalue()))
        assert [m.intensity for m in back] == [12, 0, 9]
        assert back[1].mean_speed is None
        assert back[0].mean_speed == 90.5
        assert back[0].start == minutes[0].start

    def test_detection_json_roundtrip(self):
        minutes = make_minutes([85, 84, 86, 35, 20, 15], [40, 41, 39, 38, 37, 36])
        result = detect_breakdowns(minutes)
        payload = detection_to_dict(result)
        breakdowns, hist = detection_from_dict(payload)
        assert [b.breakdown_flow for b in breakdowns] == [120]
        assert hist.counts == result.histogram.counts

    def test_minute_classes_cover_input(self):
        minutes = make_minutes([90] * 6)
        result = detect_breakdowns(minutes)
        assert all(isinstance(c, MinuteClass) for c in result.classes)
