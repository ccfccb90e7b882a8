"""Recover single-year treatment dynamics from 5-year-average coefficients,
and the partial-treatment scaling for early event times.

Two assumptions make the inversion exact: each observed value is an
equal-weighted trailing average of the five underlying years, and parallel
trends holds exactly in the pre-period (so pre-period coefficients are
forced to zero before inverting; a diagnostic flag keeps the raw
estimates instead). Under those assumptions the unique inversion is the
recursion

    tau_e = 5 * (gamma_e - gamma_{e-1}) + tau_{e-5},

with tau vanishing before adoption and gamma_{-1} = 0. Every recovered
effect is a known linear combination of the input coefficients, which the
result records so standard errors propagate through the fit covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .estimator import ATTEstimate

SMOOTH_YEARS = 5
POST_TIMES = tuple(range(0, 8))


@dataclass(frozen=True)
class YearlyEffects:
    """Single-year effects plus their linear provenance in the inputs.

    ``loadings[e]`` maps input event times to coefficients such that
    tau_e = sum(loadings[e][t] * gamma_t).
    """

    effects: Mapping[int, float]
    loadings: Mapping[int, Mapping[int, float]]
    used_raw_pre: bool = False


def unsmooth(
    gamma: Mapping[int, float],
    window: tuple[int, int] = (-5, 7),
    use_raw_pre: bool = False,
) -> YearlyEffects:
    """Invert trailing 5-year averaging of the event-time coefficients.

    ``gamma`` must cover the full window (the omitted -1 may be absent and
    is taken as zero). By default pre-period coefficients are zeroed and
    the recursion starts at adoption. With ``use_raw_pre`` the recursion
    instead starts at the window edge, producing diagnostic pre-period
    yearly effects that feed the post-period values through the e-5 term
    (the contamination the exact-parallel-trends assumption removes).
    """
    lo, hi = window
    missing = [t for t in range(lo, hi + 1) if t != -1 and t not in gamma]
    if missing:
        raise ValidationError(f"missing coefficient(s) for event time(s) {missing}")

    start = lo + 1 if use_raw_pre else 0

    def gamma_load(t: int) -> dict[int, float]:
        if t == -1 or t < lo:
            return {}
        if t < 0 and not use_raw_pre:
            return {}
        return {t: 1.0}

    # loadings of gamma_e as linear maps; tau loadings built recursively
    tau_load: dict[int, dict[int, float]] = {}
    for e in range(start, hi + 1):
        load: dict[int, float] = {}
        for t, c in gamma_load(e).items():
            load[t] = load.get(t, 0.0) + SMOOTH_YEARS * c
        for t, c in gamma_load(e - 1).items():
            load[t] = load.get(t, 0.0) - SMOOTH_YEARS * c
        for t, c in tau_load.get(e - SMOOTH_YEARS, {}).items():
            load[t] = load.get(t, 0.0) + c
        tau_load[e] = load

    effects = {
        e: sum(c * gamma.get(t, 0.0) for t, c in load.items())
        for e, load in tau_load.items()
    }
    return YearlyEffects(effects, tau_load, use_raw_pre)


def scale_partial(gamma_e: float, e: int) -> float:
    """Inflate a partial-treatment coefficient to full-treatment scale.

    At event time e in [0, 3], only e+1 of the five averaged years are
    post-adoption, so the observed coefficient is diluted by (e+1)/5.
    """
    if not (0 <= e <= 3):
        raise ValidationError(f"partial-treatment scaling applies to e in [0, 3], got {e}")
    return gamma_e * SMOOTH_YEARS / (e + 1)


def unsmooth_att(
    effects: YearlyEffects,
    gamma_cov: np.ndarray | None = None,
    gamma_order: Sequence[int] | None = None,
    window: tuple[int, int] = (4, 7),
) -> ATTEstimate:
    """Average the recovered post-window effects with a delta-method SE.

    ``gamma_cov`` is the covariance of the input coefficients in
    ``gamma_order``; without it the standard error is reported as zero
    (pure-arithmetic use).
    """
    lo, hi = window
    missing = [e for e in range(lo, hi + 1) if e not in effects.effects]
    if missing:
        raise ValidationError(f"missing yearly effect(s) for {missing}")
    times = list(range(lo, hi + 1))
    value = sum(effects.effects[e] for e in times) / len(times)

    se = 0.0
    if gamma_cov is not None:
        if gamma_order is None:
            raise ValidationError("gamma_order is required with gamma_cov")
        combined: dict[int, float] = {}
        for e in times:
            for t, c in effects.loadings[e].items():
                combined[t] = combined.get(t, 0.0) + c / len(times)
        vec = np.zeros(len(gamma_order))
        index = {t: i for i, t in enumerate(gamma_order)}
        for t, c in combined.items():
            if t not in index:
                raise ValidationError(f"gamma_order lacks event time {t}")
            vec[index[t]] = c
        cov = np.asarray(gamma_cov, dtype=float)
        se = math.sqrt(max(0.0, float(vec @ cov @ vec)))

    if se == 0.0:
        p = 1.0 if value == 0 else 0.0
    else:
        from scipy.stats import norm

        p = float(2 * norm.sf(abs(value) / se))
    return ATTEstimate(value, se, p, window)
