"""Error measures for estimated curves and ordinary least squares regression.

Absolute errors (SSE and friends) compare CFB curves point by point.
Relative errors are computed per level against a reference curve, skipping
levels where the reference is zero, and averaged either plainly (ARE) or
weighted by the theoretical per-level breakdown counts (AWRE).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .capacity import CfbCurve

TABLE_COLUMNS = (
    "sse_cf", "rsse_cf", "mse_cf", "rmse_cf",
    "are_cf", "awre_cf", "are_cdf", "awre_cdf",
)


class CollinearityError(ValueError):
    """Design matrix is rank deficient; names the offending columns."""

    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        super().__init__(f"collinear design columns: {', '.join(self.columns)}")


def _as_values(curve) -> np.ndarray:
    if isinstance(curve, CfbCurve):
        return np.asarray(curve.cumulative, dtype=float)
    return np.asarray(curve, dtype=float)


def _check_grids(a, b) -> None:
    if isinstance(a, CfbCurve) and isinstance(b, CfbCurve):
        if len(a.levels) != len(b.levels) or np.any(a.levels != b.levels):
            raise ValueError("curves are defined on different level grids")


@dataclass(frozen=True)
class CurveErrors:
    sse: float
    rsse: float
    mse: float
    rmse: float


def curve_errors(estimate, reference) -> CurveErrors:
    """Squared-error family between two curves on a shared grid."""
    _check_grids(estimate, reference)
    est = _as_values(estimate)
    ref = _as_values(reference)
    if est.shape != ref.shape:
        raise ValueError("curves are defined on different level grids")
    diff = est - ref
    sse = float(diff @ diff)
    mse = sse / len(diff)
    return CurveErrors(sse=sse, rsse=math.sqrt(sse), mse=mse, rmse=math.sqrt(mse))


@dataclass(frozen=True, eq=False)
class RelativeErrorCurve:
    """Per-level absolute relative errors with a zero-reference mask."""

    values: np.ndarray    # NaN where excluded
    included: np.ndarray  # bool mask

    @property
    def excluded(self) -> int:
        return int(np.sum(~self.included))


def relative_error_curve(estimate, reference) -> RelativeErrorCurve:
    """|est - ref| / ref per level; zero-reference levels are excluded."""
    _check_grids(estimate, reference)
    est = _as_values(estimate)
    ref = _as_values(reference)
    if est.shape != ref.shape:
        raise ValueError("curves are defined on different level grids")
    included = ref != 0
    if not included.any():
        raise ValueError("reference curve is zero everywhere; relative error undefined")
    values = np.full(len(ref), np.nan)
    values[included] = np.abs((est[included] - ref[included]) / ref[included])
    return RelativeErrorCurve(values=values, included=included)


def _re_parts(re) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(re, RelativeErrorCurve):
        return re.values, re.included
    values = np.asarray(re, dtype=float)
    return values, np.ones(len(values), dtype=bool)


def are(re) -> float:
    """Arithmetic mean of the included relative errors."""
    values, included = _re_parts(re)
    if not included.any():
        raise ValueError("no included levels to average")
    return float(values[included].mean())


def awre(re, weights) -> float:
    """Relative errors averaged with per-level weights (theoretical counts)."""
    values, included = _re_parts(re)
    w = np.asarray(weights, dtype=float)
    if w.shape != values.shape:
        raise ValueError("weights must align with the relative-error grid")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    w = w[included]
    total = w.sum()
    if total <= 0:
        raise ValueError("total weight over included levels is zero")
    return float((w * values[included]).sum() / total)


@dataclass(frozen=True)
class ErrorReport:
    """The full error bundle for one estimated capacity distribution."""

    sse: float
    rsse: float
    mse: float
    rmse: float
    are_cf: float
    awre_cf: float
    are_cdf: float
    awre_cdf: float
    reference_kind: str  # "empirical" | "theoretical"
    excluded_cf_levels: int = 0
    excluded_cdf_levels: int = 0

    def to_json_dict(self) -> dict:
        return {
            "sse_cf": self.sse,
            "rsse_cf": self.rsse,
            "mse_cf": self.mse,
            "rmse_cf": self.rmse,
            "are_cf": self.are_cf,
            "awre_cf": self.awre_cf,
            "are_cdf": self.are_cdf,
            "awre_cdf": self.awre_cdf,
            "reference_kind": self.reference_kind,
            "excluded_cf_levels": self.excluded_cf_levels,
            "excluded_cdf_levels": self.excluded_cdf_levels,
        }

    def to_csv_row(self, label: str) -> list:
        return [label, self.sse, self.rsse, self.mse, self.rmse,
                self.are_cf, self.awre_cf, self.are_cdf, self.awre_cdf]


def error_report(
    estimated_cfb,
    reference_cfb,
    estimated_cdf,
    reference_cdf,
    weights,
    reference_kind: str,
) -> ErrorReport:
    """Compose the squared-error family with ARE/AWRE of the CFB and CDF."""
    ce = curve_errors(estimated_cfb, reference_cfb)
    re_cf = relative_error_curve(estimated_cfb, reference_cfb)
    re_cdf = relative_error_curve(estimated_cdf, reference_cdf)
    return ErrorReport(
        sse=ce.sse,
        rsse=ce.rsse,
        mse=ce.mse,
        rmse=ce.rmse,
        are_cf=are(re_cf),
        awre_cf=awre(re_cf, weights),
        are_cdf=are(re_cdf),
        awre_cdf=awre(re_cdf, weights),
        reference_kind=reference_kind,
        excluded_cf_levels=re_cf.excluded,
        excluded_cdf_levels=re_cdf.excluded,
    )


# --------------------------------------------------------------------------
# ordinary least squares

@dataclass(frozen=True, eq=False)
class RegressionResult:
    names: tuple[str, ...]
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    r_squared: float
    df_resid: int
    n_obs: int

    def to_json_dict(self) -> dict:
        return {
            "terms": [
                {
                    "name": name,
                    "coefficient": float(self.coefficients[i]),
                    "std_error": float(self.std_errors[i]),
                    "t_stat": float(self.t_stats[i]),
                    "p_value": float(self.p_values[i]),
                    "ci95_lower": float(self.ci_lower[i]),
                    "ci95_upper": float(self.ci_upper[i]),
                }
                for i, name in enumerate(self.names)
            ],
            "r_squared": self.r_squared,
            "df_resid": self.df_resid,
            "n_obs": self.n_obs,
        }


def _collinear_columns(X: np.ndarray, names: Sequence[str]) -> list[str]:
    """Columns expressible (to numerical precision) from the preceding ones."""
    bad = []
    for j in range(1, X.shape[1]):
        prev = X[:, :j]
        col = X[:, j]
        coef, *_ = np.linalg.lstsq(prev, col, rcond=None)
        residual = col - prev @ coef
        if np.linalg.norm(residual) <= 1e-10 * max(np.linalg.norm(col), 1.0):
            bad.append(names[j])
    return bad


def ols_fit(
    X,
    y,
    add_intercept: bool = True,
    names: Sequence[str] | None = None,
) -> RegressionResult:
    """Ordinary least squares with t statistics and exact t-distribution p-values.

    Two-sided p-values and 95 % confidence limits use Student's t with
    n - k residual degrees of freedom.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, k0 = X.shape
    if names is None:
        names = [f"x{i}" for i in range(k0)]
    names = list(names)
    if len(names) != k0:
        raise ValueError("one name per design column required")
    if add_intercept:
        X = np.hstack([np.ones((n, 1)), X])
        names = ["intercept"] + names
    k = X.shape[1]
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} rows for {k} coefficients, got {n}")
    if np.linalg.matrix_rank(X) < k:
        raise CollinearityError(_collinear_columns(X, names))

    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    residuals = y - X @ coef
    df = n - k
    rss = float(residuals @ residuals)
    sigma2 = rss / df
    cov = sigma2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = coef / se  # exact fits yield zero residual variance
    p_values = 2.0 * stats.t.sf(np.abs(t_stats), df)
    t_crit = float(stats.t.ppf(0.975, df))
    if add_intercept:
        tss = float(np.sum((y - y.mean()) ** 2))
    else:
        tss = float(y @ y)
    r_squared = 1.0 - rss / tss if tss > 0 else 1.0
    return RegressionResult(
        names=tuple(names),
        coefficients=coef,
        std_errors=se,
        t_stats=t_stats,
        p_values=p_values,
        ci_lower=coef - t_crit * se,
        ci_upper=coef + t_crit * se,
        r_squared=r_squared,
        df_resid=df,
        n_obs=n,
    )
