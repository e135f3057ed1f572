"""Pseudo-empirical data generation and demand-profile plumbing."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capflow.capacity import BreakdownProfile
from capflow.pipeline import IntensityHistogram
from capflow.synthetic import (
    PRNG_ID,
    GeneratorConfig,
    calibrate_demand_peak,
    expected_breakdowns,
    generate_counts,
    generate_pseudo_empirical,
    scale_demand,
    split_count,
    synth_demand_profile,
)
from capflow import WeibullParams


class TestSplitCount:
    @pytest.mark.parametrize(
        "b_bar,expected_n,expected_p",
        [(0.3, 1, 0.3), (1.2, 3, 0.4), (0.0, 1, 0.0), (0.5, 1, 0.5), (1.0, 2, 0.5)],
    )
    def test_hand_cases(self, b_bar, expected_n, expected_p):
        n, p = split_count(b_bar, 0.5)
        assert n == expected_n
        assert p == pytest.approx(expected_p)

    @given(st.floats(min_value=0.0, max_value=80.0), st.floats(min_value=0.05, max_value=1.0))
    @settings(max_examples=150)
    def test_product_conserved_and_p_bounded(self, b_bar, split):
        n, p = split_count(b_bar, split)
        assert n >= 1
        assert p <= split + 1e-12
        assert n * p == pytest.approx(b_bar, rel=1e-12, abs=1e-300)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            split_count(-0.1)


def _single_level_profile(b_bar):
    return BreakdownProfile(levels=np.array([100]), b_bar=np.array([float(b_bar)]))


class TestGenerateCounts:
    def test_zero_profile_always_zero(self):
        profile = BreakdownProfile(levels=np.array([1, 2, 3]), b_bar=np.zeros(3))
        for seed in (0, 1, 99):
            assert np.all(generate_counts(profile, GeneratorConfig(seed=seed)) == 0)

    def test_deterministic_per_seed(self, demand_profile, true_params, bounds):
        from capflow.capacity import breakdown_profile, cdf_function

        profile = breakdown_profile(demand_profile, cdf_function(true_params), bounds)
        a = generate_counts(profile, GeneratorConfig(seed=123))
        b = generate_counts(profile, GeneratorConfig(seed=123))
        c = generate_counts(profile, GeneratorConfig(seed=124))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_counts_bounded_by_trials(self):
        profile = _single_level_profile(3.7)
        n, _ = split_count(3.7, 0.5)
        draws = [generate_counts(profile, GeneratorConfig(seed=s))[0] for s in range(500)]
        assert min(draws) >= 0
        assert max(draws) <= n

    def test_binomial_mean(self):
        profile = _single_level_profile(1.0)
        n, p = split_count(1.0, 0.5)
        draws = np.array(
            [generate_counts(profile, GeneratorConfig(seed=s))[0] for s in range(2000)]
        )
        se = math.sqrt(n * p * (1 - p) / len(draws))
        assert abs(draws.mean() - 1.0) <= 3 * se


class TestGeneratePseudoEmpirical:
    def test_curve_shape_and_total(self, demand_profile, true_params, bounds):
        curve, realized = generate_pseudo_empirical(
            demand_profile, true_params, bounds, GeneratorConfig(seed=20160914)
        )
        assert np.all(np.diff(curve.cumulative) >= 0)
        assert curve.final == realized
        assert realized > 0

    def test_doubling_histogram_doubles_expected_total(
        self, demand_profile, true_params, bounds
    ):
        doubled = scale_demand(demand_profile, 2.0)
        totals = []
        totals2 = []
        for seed in range(250):
            _, t1 = generate_pseudo_empirical(
                demand_profile, true_params, bounds, GeneratorConfig(seed=seed)
            )
            _, t2 = generate_pseudo_empirical(
                doubled, true_params, bounds, GeneratorConfig(seed=10_000 + seed)
            )
            totals.append(t1)
            totals2.append(t2)
        ratio = np.mean(totals2) / np.mean(totals)
        assert ratio == pytest.approx(2.0, abs=0.25)

    def test_prng_identifier_exported(self):
        assert PRNG_ID == "numpy:PCG64"


class TestScaleDemand:
    def test_doubling(self):
        hist = IntensityHistogram(counts={100: 10})
        assert scale_demand(hist, 2.0).counts == {100: 20}

    def test_half_up_rounding(self):
        hist = IntensityHistogram(counts={100: 3})
        assert scale_demand(hist, 0.5).counts == {100: 2}

    def test_zero_counts_dropped(self):
        hist = IntensityHistogram(counts={100: 1, 90: 4})
        assert scale_demand(hist, 0.1).counts == {}

    def test_invalid_factor(self):
        with pytest.raises(ValueError):
            scale_demand(IntensityHistogram(), 0.0)

    def test_published_size_ladder(self, demand_profile, true_params):
        # multiplying the record set walks the expected totals ladder
        base = expected_breakdowns(demand_profile, true_params)
        for target in (12, 25, 50, 75, 100, 150, 200, 250):
            scaled = scale_demand(demand_profile, target / base)
            achieved = expected_breakdowns(scaled, true_params)
            assert achieved == pytest.approx(target, rel=0.05)


class TestSynthDemandProfile:
    def test_total_conserved(self):
        for total in (1, 100, 6486):
            hist = synth_demand_profile(total, peak_intensity=70.0, seed=7)
            assert hist.total() == total

    def test_deterministic(self):
        a = synth_demand_profile(500, 60.0, seed=3)
        b = synth_demand_profile(500, 60.0, seed=3)
        c = synth_demand_profile(500, 60.0, seed=4)
        assert a.counts == b.counts
        assert a.counts != c.counts

    def test_support_bounded(self):
        hist = synth_demand_profile(1000, 50.0, spread=0.4, seed=1)
        assert hist.max_level() <= math.ceil(50.0 * 1.4)
        assert hist.min_level() >= 1

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            synth_demand_profile(0, 50.0)
        with pytest.raises(ValueError):
            synth_demand_profile(10, -1.0)

    def test_calibration_hits_target(self, true_params):
        peak = calibrate_demand_peak(6486, true_params, 51.4, spread=0.4, seed=7)
        hist = synth_demand_profile(6486, peak, spread=0.4, seed=7)
        assert expected_breakdowns(hist, true_params) == pytest.approx(51.4, abs=5.0)

    def test_calibration_unattainable_target(self, true_params):
        with pytest.raises(ValueError, match="not attainable"):
            calibrate_demand_peak(10, true_params, 1e6, bracket=(10.0, 20.0))
