"""Seeded generation of pseudo-empirical breakdown measurements.

Expected per-level breakdown counts are split into Bernoulli trials with
success probability at most the configured split (default 0.5), preserving
the expectation exactly. All randomness flows through a single seeded
generator so every artifact is reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .capacity import (
    Bounds,
    BreakdownProfile,
    CfbCurve,
    WeibullParams,
    breakdown_profile,
    cdf_function,
)
from .pipeline import IntensityHistogram

# Algorithm identifier recorded in every artifact that consumed randomness.
PRNG_ID = "numpy:PCG64"


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int
    target_split: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.target_split <= 1:
            raise ValueError("target_split must lie in (0, 1]")


def split_count(b_bar_j: float, target_split: float = 0.5) -> tuple[int, float]:
    """Number of Bernoulli trials and per-trial probability for one level.

    n = max(1, ceil(b_bar / split)) guarantees p <= split < 1 while keeping
    n * p == b_bar exactly.
    """
    if b_bar_j < 0:
        raise ValueError("expected breakdown count must be non-negative")
    n = max(1, math.ceil(b_bar_j / target_split))
    return n, b_bar_j / n


def generate_counts(profile: BreakdownProfile, config: GeneratorConfig) -> np.ndarray:
    """Draw realized breakdown counts per level from the seeded generator.

    Levels are processed in ascending order, each consuming its own block of
    uniform draws, so output is a pure function of (profile, seed).
    """
    rng = np.random.default_rng(config.seed)
    counts = np.zeros(len(profile.b_bar), dtype=int)
    for j, b_bar in enumerate(profile.b_bar):
        n, p = split_count(float(b_bar), config.target_split)
        counts[j] = int(np.count_nonzero(rng.random(n) < p))
    return counts


def generate_pseudo_empirical(
    hist: IntensityHistogram,
    true_params: WeibullParams,
    bounds: Bounds,
    config: GeneratorConfig,
) -> tuple[CfbCurve, int]:
    """One synthetic CFB measurement under a known capacity distribution."""
    profile = breakdown_profile(hist, cdf_function(true_params), bounds)
    counts = generate_counts(profile, config)
    curve = CfbCurve(levels=profile.levels, cumulative=np.cumsum(counts).astype(float))
    return curve, int(counts.sum())


def scale_demand(hist: IntensityHistogram, factor: float) -> IntensityHistogram:
    """Multiply every record count by `factor`, rounding half up."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    counts = {}
    for level, count in hist.counts.items():
        scaled = math.floor(count * factor + 0.5)
        if scaled > 0:
            counts[level] = scaled
    return IntensityHistogram(counts=counts, bin_width=hist.bin_width)


def synth_demand_profile(
    total_records: int,
    peak_intensity: float,
    spread: float = 0.4,
    seed: int = 0,
    jitter: float = 0.05,
) -> IntensityHistogram:
    """Surrogate demand histogram: a discretized triangle with seeded jitter.

    The triangle rises from zero to `peak_intensity` and falls back to zero
    at peak * (1 + spread). Level weights get a small seeded multiplicative
    jitter, then counts are apportioned by largest remainder so the total is
    exactly `total_records`.
    """
    if total_records <= 0:
        raise ValueError("total_records must be positive")
    if peak_intensity <= 0:
        raise ValueError("peak_intensity must be positive")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    upper = peak_intensity * (1.0 + spread)
    levels = np.arange(1, int(math.ceil(upper)) + 1)
    rising = levels <= peak_intensity
    weights = np.where(
        rising,
        levels / peak_intensity,
        (upper - levels) / max(upper - peak_intensity, 1e-12),
    )
    weights = np.clip(weights, 0.0, None)
    if jitter:
        rng = np.random.default_rng(seed)
        weights = weights * (1.0 + jitter * (2.0 * rng.random(len(levels)) - 1.0))
    if weights.sum() <= 0:
        raise ValueError("degenerate demand profile: all level weights are zero")

    ideal = weights / weights.sum() * total_records
    base = np.floor(ideal).astype(int)
    remainder = total_records - int(base.sum())
    fractions = ideal - base
    order = np.argsort(-fractions, kind="stable")
    base[order[:remainder]] += 1
    return IntensityHistogram(
        counts={int(l): int(c) for l, c in zip(levels, base) if c > 0}
    )


def expected_breakdowns(hist: IntensityHistogram, params: WeibullParams) -> float:
    """Total expected breakdowns over the histogram's own support."""
    levels = np.asarray(sorted(hist.counts), dtype=float)
    counts = np.asarray([hist.counts[int(l)] for l in levels], dtype=float)
    cdf = cdf_function(params)
    return float(np.sum(counts * cdf(levels)))


def calibrate_demand_peak(
    total_records: int,
    params: WeibullParams,
    target_total: float,
    spread: float = 0.4,
    seed: int = 0,
    bracket: tuple[float, float] = (10.0, 500.0),
    iterations: int = 80,
) -> float:
    """Bisect the triangle peak until the expected breakdown total matches.

    The expected total is monotone increasing in the peak, so plain bisection
    on the bracket converges; the caller should keep the bracket wide enough
    that the target is attainable.
    """
    lo, hi = bracket

    def total_at(peak: float) -> float:
        hist = synth_demand_profile(total_records, peak, spread=spread, seed=seed)
        return expected_breakdowns(hist, params)

    if not (total_at(lo) <= target_total <= total_at(hi)):
        raise ValueError(
            f"target total {target_total} not attainable within peak bracket {bracket}"
        )
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if total_at(mid) < target_total:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
