"""Robustness of the post-window effect to linear pre-trend violations.

A linear differential trend anchored at zero in the omitted period (-1)
takes value m * (t + 1) at event time t. The feasible slopes are those
whose trend line stays inside every pre-period confidence band; the robust
interval widens the conventional one by the most adverse feasible trend
extrapolated to the post window (mean offset 6.5 for event times 4..7).
The breakdown p-value is the boundary confidence level at which feasible
trends stop being able to drag the interval across zero, found by
bisection.

This is the desk-scale "straight line test"; second-difference smoothness
classes are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from scipy.stats import norm

from .errors import ValidationError
from .estimator import ATTEstimate, EventStudyFit

PRE_PERIODS = (-5, -4, -3, -2)
BISECTION_TOL = 1e-4


@dataclass(frozen=True)
class SensitivityResult:
    robust_ci: tuple[float, float]
    breakdown_p: float
    feasible_slopes: tuple[float, float] | None
    level: float


def _z(level: float) -> float:
    if not (0 < level < 1):
        raise ValidationError(f"confidence level {level} outside (0, 1)")
    return float(norm.ppf(0.5 + level / 2))


def feasible_slopes(
    pre_coeffs: Mapping[int, tuple[float, float]],
    level: float = 0.95,
) -> tuple[float, float] | None:
    """Slopes whose anchored trend lies inside every pre-period band.

    ``pre_coeffs`` maps pre-period event times (at most -2) to (estimate,
    standard error). Returns the closed interval endpoints, or None when
    the constraints are mutually infeasible.
    """
    if not pre_coeffs:
        raise ValidationError("no pre-period coefficients supplied")
    z = _z(level)
    m_low, m_high = float("-inf"), float("inf")
    for t, (est, se) in pre_coeffs.items():
        if t >= -1:
            raise ValidationError(f"pre-period event time must be <= -2, got {t}")
        if se < 0:
            raise ValidationError(f"negative standard error at t={t}")
        offset = t + 1  # negative
        lo_bound = (est + z * se) / offset
        hi_bound = (est - z * se) / offset
        m_low = max(m_low, lo_bound)
        m_high = min(m_high, hi_bound)
    if m_low > m_high:
        return None
    return (m_low, m_high)


def _mean_post_offset(post_window: tuple[int, int]) -> float:
    lo, hi = post_window
    offsets = [e + 1 for e in range(lo, hi + 1)]
    return sum(offsets) / len(offsets)


def _interval(att: ATTEstimate, slopes, z: float, e_bar: float) -> tuple[float, float]:
    m_low, m_high = slopes
    return (
        att.value - m_high * e_bar - z * att.std_error,
        att.value - m_low * e_bar + z * att.std_error,
    )


def robust_interval(
    att: ATTEstimate,
    pre_coeffs: Mapping[int, tuple[float, float]],
    level: float = 0.95,
    post_window: tuple[int, int] = (4, 7),
    slopes: tuple[float, float] | None = None,
) -> SensitivityResult:
    """Robust confidence interval and breakdown p-value.

    ``slopes`` overrides the feasible set at the reporting level (useful
    for the zero-violation case); the breakdown search always recomputes
    feasible slopes from the pre-period bands at each candidate level.
    """
    e_bar = _mean_post_offset(post_window)
    if slopes is None:
        slopes = feasible_slopes(pre_coeffs, level)
        if slopes is None:
            raise ValidationError(
                "feasible slope set is empty at the reporting level"
            )
    ci = _interval(att, slopes, _z(level), e_bar)

    def robust_at(alpha: float) -> bool:
        s = feasible_slopes(pre_coeffs, 1 - alpha)
        if s is None:
            return True  # no linear trend fits the bands at all
        lo, hi = _interval(att, s, _z(1 - alpha), e_bar)
        return lo > 0 or hi < 0

    eps = 1e-6
    if robust_at(eps):
        breakdown = 0.0
    elif not robust_at(1 - eps):
        breakdown = 1.0
    else:
        lo_a, hi_a = eps, 1 - eps
        while hi_a - lo_a > BISECTION_TOL:
            mid = (lo_a + hi_a) / 2
            if robust_at(mid):
                hi_a = mid
            else:
                lo_a = mid
        breakdown = (lo_a + hi_a) / 2

    return SensitivityResult(ci, breakdown, slopes, level)


def pre_coefficients(fit: EventStudyFit) -> dict[int, tuple[float, float]]:
    """Pull (estimate, se) for the pre-periods -5..-2 from a dynamic fit."""
    out = {}
    for t in PRE_PERIODS:
        term = f"gamma_{t}"
        if term in fit.coefficients:
            out[t] = (fit.coefficients[term], fit.se(term))
    if not out:
        raise ValidationError("fit has no pre-period coefficients")
    return out


def sensitivity_from_fit(
    fit: EventStudyFit,
    att: ATTEstimate,
    level: float = 0.95,
) -> SensitivityResult:
    """Convenience wrapper running the full check off a dynamic fit."""
    return robust_interval(att, pre_coefficients(fit), level, att.window)
