"""Stochastic highway capacity estimation from detector data.

The toolkit ingests per-vehicle detector events, detects traffic breakdowns,
and estimates the capacity distribution of a bottleneck either by fitting
the cumulative frequency of breakdowns (the recommended route) or by the
product-limit survival baseline, together with the synthetic-data studies
that quantify both methods' accuracy.
"""

__version__ = "0.1.0"

from .capacity import (
    BreakdownProfile,
    CfbCurve,
    WeibullParams,
    breakdown_profile,
    cdf_function,
    cumulative_frequency,
    empirical_cfb,
    weibull_cdf,
    weibull_quantile,
)
from .estimators import (
    FitOptions,
    FitResult,
    PlmCurve,
    default_bounds,
    fit_cfb,
    plm_estimate,
    plm_from_detection,
    plm_theoretical_input,
)
from .metrics import (
    CollinearityError,
    CurveErrors,
    ErrorReport,
    RegressionResult,
    are,
    awre,
    curve_errors,
    error_report,
    ols_fit,
    relative_error_curve,
)
from .pipeline import (
    BreakdownObservation,
    DetectionConfig,
    DetectionResult,
    FlowInterval,
    IntensityHistogram,
    VehicleEvent,
    aggregate_minutes,
    build_histogram,
    detect_breakdowns,
    parse_events,
    rolling_aggregate,
)
from .synthetic import (
    PRNG_ID,
    GeneratorConfig,
    calibrate_demand_peak,
    generate_counts,
    generate_pseudo_empirical,
    scale_demand,
    split_count,
    synth_demand_profile,
)

__all__ = [
    "BreakdownObservation",
    "BreakdownProfile",
    "CfbCurve",
    "CollinearityError",
    "CurveErrors",
    "DetectionConfig",
    "DetectionResult",
    "ErrorReport",
    "FitOptions",
    "FitResult",
    "FlowInterval",
    "GeneratorConfig",
    "IntensityHistogram",
    "PRNG_ID",
    "PlmCurve",
    "RegressionResult",
    "VehicleEvent",
    "WeibullParams",
    "aggregate_minutes",
    "are",
    "awre",
    "breakdown_profile",
    "build_histogram",
    "calibrate_demand_peak",
    "cdf_function",
    "cumulative_frequency",
    "curve_errors",
    "default_bounds",
    "detect_breakdowns",
    "empirical_cfb",
    "error_report",
    "fit_cfb",
    "generate_counts",
    "generate_pseudo_empirical",
    "ols_fit",
    "parse_events",
    "plm_estimate",
    "plm_from_detection",
    "plm_theoretical_input",
    "relative_error_curve",
    "rolling_aggregate",
    "scale_demand",
    "split_count",
    "synth_demand_profile",
    "weibull_cdf",
    "weibull_quantile",
]
