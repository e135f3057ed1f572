"""Capacity distribution estimators.

Two routes are implemented: the product-limit (Kaplan-Meier) survival
estimator kept as the baseline, and the cumulative-breakdown-frequency
fitting method that optimizes Weibull parameters against an observed CFB
curve. The product-limit at-risk count deliberately treats every record
with intensity >= I_j as having been exposed at level I_j; that assumption
does not hold for traffic flow and reproducing it faithfully is the point
of the baseline.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.optimize import minimize

from .capacity import (
    Bounds,
    CfbCurve,
    WeibullParams,
    breakdown_profile,
    cdf_function,
    cumulative_frequency,
    grid_levels,
    record_vector,
)
from .pipeline import BreakdownObservation, IntensityHistogram

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# product limit method

@dataclass(frozen=True, eq=False)
class PlmCurve:
    """Product-limit survival estimate over intensity levels.

    ``levels`` holds the failure levels; ``survival[i]`` is the estimate just
    above ``levels[i]``, i.e. after that level's drop. ``n`` counts records
    (censored plus failures) with intensity >= the level, ``d`` the failures
    at the level. Fractional failure counts are admitted so a theoretical
    breakdown profile can be fed through the estimator unchanged.
    """

    levels: np.ndarray
    n: np.ndarray
    d: np.ndarray
    survival: np.ndarray

    @property
    def cdf(self) -> np.ndarray:
        return 1.0 - self.survival

    def survival_at(self, intensity) -> np.ndarray | float:
        """Step evaluation: product of drops at failure levels strictly below."""
        x = np.asarray(intensity, dtype=float)
        idx = np.searchsorted(self.levels, x, side="left")
        steps = np.concatenate(([1.0], self.survival))
        out = steps[idx]
        return float(out) if x.ndim == 0 else out

    def cdf_at(self, intensity) -> np.ndarray | float:
        x = np.asarray(intensity, dtype=float)
        out = 1.0 - self.survival_at(x)
        return float(out) if x.ndim == 0 else out


def _as_failure_map(failures) -> dict[int, float]:
    if isinstance(failures, Mapping):
        items = failures.items()
    else:
        items = Counter(int(f) for f in failures).items()
    out = {}
    for level, count in items:
        count = float(count)
        if count < 0:
            raise ValueError(f"negative failure count at level {level}")
        if count > 0:
            out[int(level)] = count
    return out


def plm_estimate(
    failures: Mapping[int, float] | Iterable[int],
    records: IntensityHistogram | Mapping[int, float],
) -> PlmCurve:
    """Kaplan-Meier product over failure levels.

    ``records`` holds the censored mass per level; the at-risk count at level
    I_j is the total of censored and failure records with intensity >= I_j.
    A real-valued censored mapping is accepted alongside fractional failure
    counts for the theoretical-input mode.
    """
    fail = _as_failure_map(failures)
    censored = records.counts if isinstance(records, IntensityHistogram) else dict(records)
    mass: dict[int, float] = {}
    for level, count in censored.items():
        if count < 0:
            raise ValueError(f"negative censored count at level {level}")
        mass[int(level)] = mass.get(int(level), 0.0) + float(count)
    for level, count in fail.items():
        mass[level] = mass.get(level, 0.0) + count

    levels = np.asarray(sorted(fail), dtype=float)
    d = np.asarray([fail[int(l)] for l in levels], dtype=float)
    all_levels = np.asarray(sorted(mass), dtype=float)
    all_counts = np.asarray([mass[int(l)] for l in all_levels], dtype=float)
    suffix = np.cumsum(all_counts[::-1])[::-1]
    # at-risk mass with intensity >= each failure level
    pos = np.searchsorted(all_levels, levels, side="left")
    n = suffix[pos]

    if np.any(n <= 0):
        bad = levels[n <= 0]
        raise ValueError(f"no records at risk at failure level(s) {bad.tolist()}")
    if np.any(d > n * (1 + 1e-12)):
        bad = levels[d > n * (1 + 1e-12)]
        raise ValueError(f"more failures than records at risk at level(s) {bad.tolist()}")
    survival = np.cumprod(1.0 - np.minimum(d / n, 1.0))
    return PlmCurve(levels=levels, n=n, d=d, survival=survival)


def plm_from_detection(
    breakdowns: Iterable[BreakdownObservation],
    censored: IntensityHistogram,
) -> PlmCurve:
    """Apply the product-limit estimator to pipeline output."""
    flows = [b.breakdown_flow for b in breakdowns]
    if not flows:
        raise ValueError("product-limit estimate needs at least one breakdown")
    return plm_estimate(flows, censored)


def plm_theoretical_input(
    hist: IntensityHistogram,
    params: WeibullParams,
    bounds: Bounds,
) -> tuple[dict[int, float], dict[int, float]]:
    """Noise-free estimator input: expected failures and surviving mass per level."""
    profile = breakdown_profile(hist, cdf_function(params), bounds)
    r = record_vector(hist, bounds)
    failures = {}
    censored = {}
    for level, b_bar, count in zip(profile.levels, profile.b_bar, r):
        if b_bar > 0:
            failures[int(level)] = float(b_bar)
        if count - b_bar > 0:
            censored[int(level)] = float(count - b_bar)
    return failures, censored


# --------------------------------------------------------------------------
# bounds

def default_bounds(
    hist: IntensityHistogram, breakdowns: Iterable[BreakdownObservation]
) -> Bounds:
    """75 % of the lowest breakdown flow up to 110 % of the highest intensity.

    Integer arithmetic keeps floor/ceil exact at the decimal boundaries.
    """
    flows = [b.breakdown_flow for b in breakdowns]
    if not flows:
        raise ValueError(
            "no breakdown observations: supply explicit bounds (--imin/--imax)"
        )
    if hist.total() == 0:
        raise ValueError("empty histogram: supply explicit bounds")
    max_intensity = max(hist.max_level(), max(flows))
    imin = (3 * min(flows)) // 4
    imax = -((-11 * max_intensity) // 10)
    return int(imin), int(imax)


# --------------------------------------------------------------------------
# CFB fitting

@dataclass(frozen=True)
class FitOptions:
    """Multi-start Nelder-Mead settings for the CFB fit.

    The simplex runs over (ln scale, ln shape) so positivity is structural;
    an absolute step tolerance in log space is a relative step tolerance on
    the parameters themselves.
    """

    scale_start_span: tuple[float, float] = (0.8, 1.2)
    n_scale_starts: int = 5
    shape_starts: tuple[float, ...] = (3.0, 5.0, 7.0, 9.0, 11.0)
    step_rel_tol: float = 1e-8
    objective_abs_tol: float = 1e-10
    max_iterations: int = 2000


@dataclass(frozen=True, eq=False)
class FitResult:
    """Optimal Weibull parameters and the curve they predict."""

    params: WeibullParams
    sse: float
    bounds: Bounds
    predicted_cfb: CfbCurve
    iterations: int
    converged: bool
    starts: int = field(default=0)

    def to_json_dict(self) -> dict:
        return {
            "params": self.params.to_json_dict(),
            "sse": self.sse,
            "bounds": [self.bounds[0], self.bounds[1]],
            "predicted_cfb": self.predicted_cfb.to_json_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "starts": self.starts,
        }


def _cfb_objective(r: np.ndarray, levels: np.ndarray, target: np.ndarray):
    log_levels = np.zeros(len(levels))
    positive = levels > 0
    log_levels[positive] = np.log(levels[positive].astype(float))

    def objective(q: np.ndarray) -> float:
        ln_scale, ln_shape = q
        shape = math.exp(ln_shape)
        t = shape * (log_levels - ln_scale)
        cdf = -np.expm1(-np.exp(t))
        if not positive.all():
            cdf[~positive] = 0.0
        err = np.cumsum(r * cdf) - target
        return float(err @ err)

    return objective


def fit_cfb(
    hist: IntensityHistogram,
    target: CfbCurve,
    bounds: Bounds,
    options: FitOptions | None = None,
) -> FitResult:
    """Fit Weibull capacity parameters by least squares on the CFB curve.

    The objective sums squared differences between the target curve and the
    curve implied by the candidate CDF over every integer level of the
    bounds grid. All starts of the multi-start grid are run to completion and
    the best final objective wins; exact ties go to the smallest scale, then
    the smallest shape, so results are reproducible.
    """
    options = options or FitOptions()
    levels = grid_levels(bounds)
    if len(target.levels) != len(levels) or np.any(target.levels != levels):
        raise ValueError("target curve must be defined on the bounds grid")
    r = record_vector(hist, bounds)
    if r.sum() <= 0:
        raise ValueError("histogram has no records inside the bounds")
    target_values = np.asarray(target.cumulative, dtype=float)
    if target_values[-1] <= 0:
        raise ValueError("target curve contains no breakdowns to fit")

    objective = _cfb_objective(r, levels, target_values)
    lo, hi = options.scale_start_span
    scale_starts = np.linspace(lo, hi, options.n_scale_starts) * float(levels.max())

    candidates = []
    for scale0 in scale_starts:
        for shape0 in options.shape_starts:
            res = minimize(
                objective,
                x0=np.array([math.log(scale0), math.log(shape0)]),
                method="Nelder-Mead",
                options={
                    "xatol": options.step_rel_tol,
                    "fatol": options.objective_abs_tol,
                    "maxiter": options.max_iterations,
                    "maxfev": 10 * options.max_iterations,
                },
            )
            candidates.append(
                (float(res.fun), math.exp(res.x[0]), math.exp(res.x[1]),
                 int(res.nit), bool(res.success))
            )
    sse, scale, shape, iterations, converged = min(candidates)
    if not converged:
        logger.warning(
            "CFB fit did not meet tolerances within %d iterations", options.max_iterations
        )
    params = WeibullParams(scale=scale, shape=shape)
    predicted = cumulative_frequency(breakdown_profile(hist, cdf_function(params), bounds))
    return FitResult(
        params=params,
        sse=sse,
        bounds=(int(bounds[0]), int(bounds[1])),
        predicted_cfb=predicted,
        iterations=iterations,
        converged=converged,
        starts=len(candidates),
    )
