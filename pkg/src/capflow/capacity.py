"""Parametric capacity distribution and cumulative breakdown-frequency curves.

The capacity of a bottleneck is modelled as a Weibull-distributed random
variable over traffic intensity. Combining its CDF with the histogram of
recorded free-flow intensities yields the expected breakdown count per
intensity level and, by prefix summation, the cumulative frequency of
breakdowns (CFB) curve that the estimators fit against.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .pipeline import BreakdownObservation, IntensityHistogram

logger = logging.getLogger(__name__)

Bounds = tuple[int, int]


@dataclass(frozen=True)
class WeibullParams:
    """Weibull capacity distribution: scale in PCE per interval, shape unitless."""

    scale: float
    shape: float

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not self.shape > 0:
            raise ValueError(f"shape must be positive, got {self.shape}")

    def to_json_dict(self) -> dict[str, float]:
        return {"scale": self.scale, "shape": self.shape}

    @classmethod
    def from_json_dict(cls, payload: Mapping[str, float]) -> "WeibullParams":
        return cls(scale=float(payload["scale"]), shape=float(payload["shape"]))


def weibull_cdf(params: WeibullParams, intensity):
    """P(capacity <= intensity) = 1 - exp(-(I/scale)^shape).

    Accepts a scalar or array; intensities must be non-negative.
    """
    x = np.asarray(intensity, dtype=float)
    if np.any(x < 0):
        raise ValueError("intensity must be non-negative")
    out = -np.expm1(-np.power(x / params.scale, params.shape))
    return float(out) if np.isscalar(intensity) or x.ndim == 0 else out


def weibull_quantile(params: WeibullParams, p):
    """Inverse of weibull_cdf: scale * (-ln(1-p))^(1/shape) for p in (0, 1)."""
    q = np.asarray(p, dtype=float)
    if np.any(q <= 0) or np.any(q >= 1):
        raise ValueError("probability must lie strictly between 0 and 1")
    out = params.scale * np.power(-np.log1p(-q), 1.0 / params.shape)
    return float(out) if np.isscalar(p) or q.ndim == 0 else out


def cdf_function(params: WeibullParams) -> Callable[[np.ndarray], np.ndarray]:
    """Bind params into the one-argument CDF contract used by the profile ops."""
    return lambda intensity: weibull_cdf(params, intensity)


@dataclass(frozen=True, eq=False)
class BreakdownProfile:
    """Expected breakdown count per integer intensity level on a fixed grid."""

    levels: np.ndarray  # ascending integer grid [I_min, I_max]
    b_bar: np.ndarray   # theoretical mean breakdown count per level

    def __post_init__(self) -> None:
        if len(self.levels) != len(self.b_bar):
            raise ValueError("levels and b_bar must have equal length")
        if np.any(np.diff(self.levels) <= 0):
            raise ValueError("levels must be strictly increasing")
        if np.any(self.b_bar < 0) or not np.all(np.isfinite(self.b_bar)):
            raise ValueError("b_bar values must be finite and non-negative")

    @property
    def total(self) -> float:
        return float(self.b_bar.sum())


@dataclass(frozen=True, eq=False)
class CfbCurve:
    """Cumulative frequency of breakdowns evaluated on an integer grid."""

    levels: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self) -> None:
        if len(self.levels) != len(self.cumulative):
            raise ValueError("levels and cumulative must have equal length")
        if np.any(np.diff(self.cumulative) < 0):
            raise ValueError("cumulative values must be non-decreasing")

    @property
    def final(self) -> float:
        return float(self.cumulative[-1]) if len(self.cumulative) else 0.0

    def to_json_dict(self) -> dict[str, list]:
        return {
            "levels": [int(v) for v in self.levels],
            "values": [float(v) for v in self.cumulative],
        }

    @classmethod
    def from_json_dict(cls, payload: Mapping[str, list]) -> "CfbCurve":
        return cls(
            levels=np.asarray(payload["levels"], dtype=int),
            cumulative=np.asarray(payload["values"], dtype=float),
        )


def _validate_bounds(bounds: Bounds) -> tuple[int, int]:
    imin, imax = int(bounds[0]), int(bounds[1])
    if imin < 0:
        raise ValueError(f"lower intensity bound must be non-negative, got {imin}")
    if imin >= imax:
        raise ValueError(f"invalid bounds: need I_min < I_max, got ({imin}, {imax})")
    return imin, imax


def grid_levels(bounds: Bounds) -> np.ndarray:
    """Integer level grid [I_min, I_max] inclusive."""
    imin, imax = _validate_bounds(bounds)
    return np.arange(imin, imax + 1)


def record_vector(hist: IntensityHistogram, bounds: Bounds) -> np.ndarray:
    """Histogram counts aligned to the grid; levels outside the bounds are ignored."""
    imin, imax = _validate_bounds(bounds)
    r = np.zeros(imax - imin + 1, dtype=float)
    for level, count in hist.counts.items():
        if imin <= level <= imax:
            r[level - imin] = count
    return r


def breakdown_profile(
    hist: IntensityHistogram,
    cdf: Callable[[np.ndarray], np.ndarray],
    bounds: Bounds,
) -> BreakdownProfile:
    """Expected breakdowns per level: b_bar_j = r_j * F(I_j) on the grid.

    `cdf` is any vectorised capacity CDF over intensity; alternatives to the
    Weibull drop in here.
    """
    levels = grid_levels(bounds)
    r = record_vector(hist, bounds)
    if hist.total() == 0:
        logger.warning("breakdown profile built from an empty histogram")
    F = np.asarray(cdf(levels.astype(float)), dtype=float)
    if F.shape != levels.shape:
        raise ValueError("cdf must return one value per level")
    if np.any(F < 0) or np.any(F > 1) or not np.all(np.isfinite(F)):
        raise ValueError("cdf values must lie in [0, 1]")
    return BreakdownProfile(levels=levels, b_bar=r * F)


def cumulative_frequency(profile: BreakdownProfile) -> CfbCurve:
    """Prefix-sum a breakdown profile into a CFB curve."""
    return CfbCurve(levels=profile.levels, cumulative=np.cumsum(profile.b_bar))


def empirical_cfb(
    breakdowns: Iterable[BreakdownObservation] | Iterable[int],
    bounds: Bounds,
) -> CfbCurve:
    """Step curve of observed breakdown counts at or below each grid level.

    Flows outside the bounds are counted at the nearest end with a warning.
    """
    levels = grid_levels(bounds)
    flows = np.asarray(
        [int(getattr(b, "breakdown_flow", b)) for b in breakdowns], dtype=float
    )
    outside = int(np.sum((flows < levels[0]) | (flows > levels[-1])))
    if outside:
        logger.warning("%d breakdown flow(s) outside bounds; clipped to the grid ends", outside)
    clipped = np.clip(flows, levels[0], levels[-1])
    clipped.sort()
    counts = np.searchsorted(clipped, levels, side="right").astype(float)
    return CfbCurve(levels=levels, cumulative=counts)
