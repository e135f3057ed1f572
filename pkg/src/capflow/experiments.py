"""Simulation studies: replicate accuracy, sample-size and censoring sweeps,
method comparison, and the error-vs-data regression.

Every study is a pure function of its inputs and seeds. Replicate r of a
case uses seed ``base_seed + r``; cases within a sweep space their base
seeds by a fixed stride, so any single case can be reproduced in isolation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .capacity import (
    Bounds,
    CfbCurve,
    WeibullParams,
    breakdown_profile,
    cdf_function,
    cumulative_frequency,
    grid_levels,
    record_vector,
    weibull_cdf,
)
from .estimators import (
    FitOptions,
    FitResult,
    fit_cfb,
    plm_estimate,
    plm_theoretical_input,
)
from .metrics import (
    CollinearityError,
    ErrorReport,
    RegressionResult,
    curve_errors,
    error_report,
    ols_fit,
)
from .pipeline import IntensityHistogram
from .synthetic import (
    GeneratorConfig,
    calibrate_demand_peak,
    expected_breakdowns,
    generate_pseudo_empirical,
    scale_demand,
    synth_demand_profile,
)

logger = logging.getLogger(__name__)

DEFAULT_BASE_SEED = 20160914
DEFAULT_SEED_STRIDE = 1000

# Three capacity settings whose breakdown probability drops roughly 1x, 2x,
# and 8x on the same demand profile; labels name the reduction.
CANONICAL_SETTINGS: tuple[tuple[str, WeibullParams], ...] = (
    ("1", WeibullParams(150.0, 6.5)),
    ("2", WeibullParams(160.0, 7.0)),
    ("8", WeibullParams(183.0, 7.5)),
)
CANONICAL_TARGETS: tuple[float, ...] = (25.0, 50.0, 100.0, 200.0)
# Five extra (label, target) cases filling the 17-case regression grid.
EXTRA_CASES: tuple[tuple[str, float], ...] = (
    ("2", 12.0), ("2", 75.0), ("2", 150.0), ("8", 75.0), ("8", 250.0),
)

REPLICATE_VARIABLES = (
    "realized_queues", "est_scale", "est_shape",
    "rsse_emp", "rsse_true", "are_cf", "awre_cf", "are_cdf", "awre_cdf",
)


def canonical_demand(
    records: int = 6486,
    spread: float = 0.4,
    seed: int = 7,
    expected_total: float = 51.4,
    params: WeibullParams = WeibullParams(150.0, 6.5),
) -> IntensityHistogram:
    """Surrogate demand profile calibrated to a chosen expected breakdown total."""
    peak = calibrate_demand_peak(records, params, expected_total, spread=spread, seed=seed)
    return synth_demand_profile(records, peak, spread=spread, seed=seed)


def theoretical_bounds(
    hist: IntensityHistogram,
    params: WeibullParams,
    first_breakdown_mass: float = 1.0,
) -> Bounds:
    """Analysis bounds for synthetic studies, mirroring the empirical rule.

    The lowest recorded breakdown flow is unknown before generation, so its
    stand-in is the level where the theoretical cumulative breakdown count
    first reaches `first_breakdown_mass`; the upper bound is 110 % of the
    highest demand level.
    """
    if hist.total() == 0:
        raise ValueError("cannot derive bounds from an empty histogram")
    levels = np.asarray(sorted(hist.counts))
    counts = np.asarray([hist.counts[int(l)] for l in levels], dtype=float)
    cum = np.cumsum(counts * weibull_cdf(params, levels.astype(float)))
    threshold = min(first_breakdown_mass, cum[-1] / 2) if cum[-1] > 0 else 0.0
    if threshold <= 0:
        raise ValueError("capacity distribution yields no expected breakdowns")
    first_level = int(levels[np.searchsorted(cum, threshold)])
    imin = (3 * first_level) // 4
    imax = -((-11 * int(levels.max())) // 10)
    return imin, imax


# --------------------------------------------------------------------------
# replicate cases

@dataclass(frozen=True)
class ExperimentCase:
    case_id: str
    scale_factor: float
    true_params: WeibullParams
    replicates: int = 15
    base_seed: int = DEFAULT_BASE_SEED


@dataclass(frozen=True)
class ReplicateRecord:
    replicate: int
    seed: int
    realized_queues: float
    est_scale: float
    est_shape: float
    rsse_emp: float
    rsse_true: float
    are_cf: float
    awre_cf: float
    are_cdf: float
    awre_cdf: float
    converged: bool

    def value(self, variable: str) -> float:
        return float(getattr(self, variable))


@dataclass(frozen=True)
class CaseSummary:
    case: ExperimentCase
    tf_records: int
    theoretical_queues: float
    replicates: tuple[ReplicateRecord, ...]
    mean: dict[str, float]
    sd: dict[str, float]
    max: dict[str, float]

    @staticmethod
    def summarize(case, tf_records, theoretical_queues, records) -> "CaseSummary":
        records = tuple(records)
        mean, sd, mx = {}, {}, {}
        for var in REPLICATE_VARIABLES:
            values = np.asarray([r.value(var) for r in records], dtype=float)
            mean[var] = float(values.mean())
            sd[var] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            mx[var] = float(values.max())
        return CaseSummary(
            case=case,
            tf_records=tf_records,
            theoretical_queues=theoretical_queues,
            replicates=records,
            mean=mean,
            sd=sd,
            max=mx,
        )


def _truth(hist: IntensityHistogram, params: WeibullParams, bounds: Bounds):
    profile = breakdown_profile(hist, cdf_function(params), bounds)
    truth_cfb = cumulative_frequency(profile)
    cdf_true = weibull_cdf(params, profile.levels.astype(float))
    return profile, truth_cfb, cdf_true


def run_case(
    case: ExperimentCase,
    hist: IntensityHistogram,
    bounds: Bounds,
    options: FitOptions | None = None,
    force_expected_counts: bool = False,
) -> CaseSummary:
    """Generate, fit, and score `case.replicates` pseudo-empirical curves.

    With ``force_expected_counts`` the random draw is replaced by the closest
    integer staircase to the theoretical curve (the cumulative counts are
    rounded, staying within half a breakdown of truth everywhere), which
    isolates fitting error from sampling noise.
    """
    scaled = scale_demand(hist, case.scale_factor) if case.scale_factor != 1 else hist
    profile, truth_cfb, cdf_true = _truth(scaled, case.true_params, bounds)
    weights = profile.b_bar
    records = []
    for i in range(case.replicates):
        seed = case.base_seed + i
        if force_expected_counts:
            staircase = np.floor(np.cumsum(profile.b_bar) + 0.5)
            curve = CfbCurve(levels=profile.levels, cumulative=staircase)
            realized = int(staircase[-1])
        else:
            curve, realized = generate_pseudo_empirical(
                scaled, case.true_params, bounds, GeneratorConfig(seed=seed)
            )
        fit = fit_cfb(scaled, curve, bounds, options)
        if not fit.converged:
            logger.warning("case %s replicate %d: fit did not converge", case.case_id, i)
        est_cdf = weibull_cdf(fit.params, profile.levels.astype(float))
        report = error_report(fit.predicted_cfb, truth_cfb, est_cdf, cdf_true,
                              weights, "theoretical")
        records.append(
            ReplicateRecord(
                replicate=i,
                seed=seed,
                realized_queues=float(realized),
                est_scale=fit.params.scale,
                est_shape=fit.params.shape,
                rsse_emp=curve_errors(fit.predicted_cfb, curve).rsse,
                rsse_true=report.rsse,
                are_cf=report.are_cf,
                awre_cf=report.awre_cf,
                are_cdf=report.are_cdf,
                awre_cdf=report.awre_cdf,
                converged=fit.converged,
            )
        )
    return CaseSummary.summarize(case, scaled.total(), profile.total, records)


# --------------------------------------------------------------------------
# sample-size sweep

@dataclass(frozen=True)
class FlatRow:
    """One replicate of the error-vs-data-quantity dataset."""

    tf_records: int
    bd_records: int
    awre_cf: float
    awre_cdf: float
    case_id: str
    seed: int


@dataclass(frozen=True)
class SweepResult:
    cases: tuple[CaseSummary, ...]
    flat: tuple[FlatRow, ...]
    skipped: tuple[str, ...]


def solve_scale_factor(
    base_hist: IntensityHistogram,
    params: WeibullParams,
    bounds: Bounds,
    target_total: float,
    factor_cap: float = 500.0,
    tolerance: float = 0.05,
) -> float | None:
    """Histogram multiplier whose expected breakdown total hits the target.

    Returns None (with a diagnostic) when the target is outside the cap or
    integer rounding cannot get within the relative tolerance.
    """
    def total_at(factor: float) -> float:
        return breakdown_profile(
            scale_demand(base_hist, factor), cdf_function(params), bounds
        ).total

    base_total = total_at(1.0)
    if base_total <= 0:
        logger.warning("unreachable target %.1f: base profile has no expected breakdowns",
                       target_total)
        return None
    guess = target_total / base_total
    if guess > factor_cap:
        logger.warning("unreachable target %.1f: factor %.1f exceeds cap %.1f",
                       target_total, guess, factor_cap)
        return None
    lo, hi = guess / 4.0, min(4.0 * guess, factor_cap)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if total_at(mid) < target_total:
            lo = mid
        else:
            hi = mid
    factor = 0.5 * (lo + hi)
    achieved = total_at(factor)
    if abs(achieved - target_total) > tolerance * target_total:
        logger.warning("target %.1f missed: achieved %.2f with factor %.3f",
                       target_total, achieved, factor)
        return None
    return factor


def sample_size_sweep(
    base_hist: IntensityHistogram,
    settings: Sequence[tuple[str, WeibullParams]],
    targets: Sequence[float],
    bounds: Bounds,
    extra_cases: Iterable[tuple[str, float]] = (),
    replicates: int = 15,
    base_seed: int = DEFAULT_BASE_SEED,
    seed_stride: int = DEFAULT_SEED_STRIDE,
    factor_cap: float = 500.0,
    options: FitOptions | None = None,
) -> SweepResult:
    """Run every (capacity setting, target breakdown total) case.

    The cross product of settings and targets comes first, then the extra
    (label, target) cases; each case gets its own base seed.
    """
    params_by_label = dict(settings)
    specs: list[tuple[str, WeibullParams, float]] = [
        (label, params, target) for label, params in settings for target in targets
    ]
    for label, target in extra_cases:
        specs.append((label, params_by_label[label], target))

    cases: list[CaseSummary] = []
    flat: list[FlatRow] = []
    skipped: list[str] = []
    for index, (label, params, target) in enumerate(specs):
        case_id = f"{int(round(target))}_{label}"
        factor = solve_scale_factor(base_hist, params, bounds, target, factor_cap)
        if factor is None:
            skipped.append(case_id)
            continue
        case = ExperimentCase(
            case_id=case_id,
            scale_factor=factor,
            true_params=params,
            replicates=replicates,
            base_seed=base_seed + seed_stride * index,
        )
        summary = run_case(case, base_hist, bounds, options)
        cases.append(summary)
        for record in summary.replicates:
            flat.append(
                FlatRow(
                    tf_records=summary.tf_records,
                    bd_records=int(record.realized_queues),
                    awre_cf=record.awre_cf,
                    awre_cdf=record.awre_cdf,
                    case_id=case_id,
                    seed=record.seed,
                )
            )
    return SweepResult(cases=tuple(cases), flat=tuple(flat), skipped=tuple(skipped))


# --------------------------------------------------------------------------
# censoring sweep

@dataclass(frozen=True)
class CensoringPoint:
    target_censoring: float
    achieved_censoring: float
    params: WeibullParams
    plm: ErrorReport
    fit: ErrorReport


def _plm_grid_reports(
    hist: IntensityHistogram,
    bounds: Bounds,
    failures,
    censored,
    truth_cfb: CfbCurve,
    cdf_true: np.ndarray,
    weights: np.ndarray,
) -> ErrorReport:
    levels = grid_levels(bounds)
    r = record_vector(hist, bounds)
    curve = plm_estimate(failures, censored)
    cdf_plm = np.asarray(curve.cdf_at(levels.astype(float)), dtype=float)
    cfb_plm = CfbCurve(levels=levels, cumulative=np.cumsum(r * cdf_plm))
    return error_report(cfb_plm, truth_cfb, cdf_plm, cdf_true, weights, "theoretical")


def censoring_sweep(
    hist: IntensityHistogram,
    censoring_targets: Sequence[float],
    bounds: Bounds,
    shape: float = 6.5,
    options: FitOptions | None = None,
) -> list[CensoringPoint]:
    """Noise-free product-limit error across censoring rates.

    For each target rate a scale parameter is solved (bisection, fixed shape)
    so the expected breakdown share of the record set equals 1 - rate. The
    theoretical breakdown profile is then fed to the product-limit estimator
    as fractional failures, and the CFB fit runs on the same exact curve for
    contrast.
    """
    total = hist.total()
    if total == 0:
        raise ValueError("empty histogram")
    max_level = hist.max_level()
    points: list[CensoringPoint] = []
    for target in censoring_targets:
        if not 0 < target < 1:
            raise ValueError(f"censoring rate must lie in (0, 1), got {target}")
        want_ratio = 1.0 - target
        lo, hi = 0.5, 20.0 * max_level

        def ratio(scale: float) -> float:
            return expected_breakdowns(hist, WeibullParams(scale, shape)) / total

        if not (ratio(hi) <= want_ratio <= ratio(lo)):
            logger.warning("censoring target %.4f outside solvable range; skipped", target)
            continue
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if ratio(mid) > want_ratio:
                lo = mid
            else:
                hi = mid
        params = WeibullParams(0.5 * (lo + hi), shape)
        achieved = 1.0 - ratio(params.scale)

        profile, truth_cfb, cdf_true = _truth(hist, params, bounds)
        failures, censored = plm_theoretical_input(hist, params, bounds)
        plm_report = _plm_grid_reports(
            hist, bounds, failures, censored, truth_cfb, cdf_true, profile.b_bar
        )
        fit = fit_cfb(hist, truth_cfb, bounds, options)
        est_cdf = weibull_cdf(fit.params, profile.levels.astype(float))
        fit_report = error_report(
            fit.predicted_cfb, truth_cfb, est_cdf, cdf_true, profile.b_bar, "theoretical"
        )
        points.append(
            CensoringPoint(
                target_censoring=float(target),
                achieved_censoring=float(achieved),
                params=params,
                plm=plm_report,
                fit=fit_report,
            )
        )
    return points


# --------------------------------------------------------------------------
# method comparison

@dataclass(frozen=True)
class MethodComparison:
    seed: int
    realized_queues: int
    fit_result: FitResult
    fit: ErrorReport
    plm: ErrorReport
    ratios: dict[str, float]


def compare_methods(
    hist: IntensityHistogram,
    true_params: WeibullParams,
    bounds: Bounds,
    seed: int,
    options: FitOptions | None = None,
) -> MethodComparison:
    """Both estimators on one pseudo-empirical replicate, scored against truth."""
    profile, truth_cfb, cdf_true = _truth(hist, true_params, bounds)
    weights = profile.b_bar
    curve, realized = generate_pseudo_empirical(
        hist, true_params, bounds, GeneratorConfig(seed=seed)
    )
    counts = np.diff(curve.cumulative, prepend=0.0)
    r = record_vector(hist, bounds)

    fit = fit_cfb(hist, curve, bounds, options)
    est_cdf = weibull_cdf(fit.params, profile.levels.astype(float))
    fit_report = error_report(fit.predicted_cfb, truth_cfb, est_cdf, cdf_true,
                              weights, "theoretical")

    failures = {int(l): float(c) for l, c in zip(profile.levels, counts) if c > 0}
    # The Bernoulli generator can exceed the record count at sparse top
    # levels; clamp the surviving mass at zero so the at-risk counts stay
    # consistent.
    censored = {
        int(l): float(max(rec - c, 0.0))
        for l, rec, c in zip(profile.levels, r, counts)
        if rec - c > 0
    }
    plm_report = _plm_grid_reports(hist, bounds, failures, censored,
                                   truth_cfb, cdf_true, weights)
    ratios = {}
    for name in ("sse", "rsse", "mse", "rmse", "are_cf", "awre_cf", "are_cdf", "awre_cdf"):
        fit_value = getattr(fit_report, name)
        plm_value = getattr(plm_report, name)
        ratios[name] = plm_value / fit_value if fit_value > 0 else math.inf
    return MethodComparison(
        seed=seed,
        realized_queues=realized,
        fit_result=fit,
        fit=fit_report,
        plm=plm_report,
        ratios=ratios,
    )


# --------------------------------------------------------------------------
# error regression

AVAILABLE_TERMS = ("tf_records", "bd_records", "bd_tf_ratio", "ln_tf_records", "ln_bd_records")

CANDIDATE_MODELS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("full", ("tf_records", "bd_records", "bd_tf_ratio", "ln_tf_records", "ln_bd_records")),
    ("lntf_bd_lnbd", ("ln_tf_records", "bd_records", "ln_bd_records")),
    ("lnbd", ("ln_bd_records",)),
    ("bd_lnbd", ("bd_records", "ln_bd_records")),
)


@dataclass(frozen=True)
class CandidateModel:
    name: str
    terms: tuple[str, ...]
    result: RegressionResult | None
    skipped_reason: str | None = None


@dataclass(frozen=True)
class AwreRegression:
    response: str
    candidates: tuple[CandidateModel, ...]
    best_index: int | None
    dropped_rows: int = 0

    @property
    def best(self) -> CandidateModel | None:
        return self.candidates[self.best_index] if self.best_index is not None else None


def awre_regression(
    rows: Sequence[FlatRow],
    response: str = "awre_cdf",
    significance: float = 0.1,
    candidates: Sequence[tuple[str, tuple[str, ...]]] = CANDIDATE_MODELS,
) -> AwreRegression:
    """Fit the candidate error models and flag the best fully-significant one.

    The winner maximizes R squared among candidates whose every non-intercept
    coefficient has p below the significance level.
    """
    if response not in ("awre_cf", "awre_cdf"):
        raise ValueError("response must be awre_cf or awre_cdf")
    usable = [row for row in rows if row.bd_records > 0]
    dropped = len(rows) - len(usable)
    if dropped:
        logger.warning("%d rows without breakdowns dropped from the regression", dropped)
    if len(usable) < 30:
        raise ValueError(f"regression needs at least 30 rows, got {len(usable)}")

    tf = np.asarray([row.tf_records for row in usable], dtype=float)
    bd = np.asarray([row.bd_records for row in usable], dtype=float)
    columns = {
        "tf_records": tf,
        "bd_records": bd,
        "bd_tf_ratio": bd / tf,
        "ln_tf_records": np.log(tf),
        "ln_bd_records": np.log(bd),
    }
    y = np.asarray([getattr(row, response) for row in usable], dtype=float)

    fitted: list[CandidateModel] = []
    for name, terms in candidates:
        X = np.column_stack([columns[t] for t in terms])
        try:
            result = ols_fit(X, y, add_intercept=True, names=terms)
        except CollinearityError as exc:
            logger.warning("candidate %s skipped: %s", name, exc)
            fitted.append(CandidateModel(name, tuple(terms), None, str(exc)))
            continue
        fitted.append(CandidateModel(name, tuple(terms), result))

    best_index = None
    best_r2 = -math.inf
    for i, model in enumerate(fitted):
        if model.result is None:
            continue
        explanatory_p = model.result.p_values[1:]
        if np.all(explanatory_p < significance) and model.result.r_squared > best_r2:
            best_index = i
            best_r2 = model.result.r_squared
    return AwreRegression(
        response=response,
        candidates=tuple(fitted),
        best_index=best_index,
        dropped_rows=dropped,
    )
