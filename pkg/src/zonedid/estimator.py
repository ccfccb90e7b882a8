"""Weighted least squares for the static and dynamic event-study
specifications, ATT aggregation, and heterogeneity variants.

The static specification pools fully-post event times [4, 7] into a single
coefficient ("beta") with separate coefficients for every earlier event
time except the omitted reference -1; the dynamic specification estimates
one coefficient per event time. Both include a treated-arm intercept ("d")
and a full set of event-time effects ("delta_e", which span the global
intercept). Solving goes through an SVD-based least squares rather than
normal equations because stacked designs with duplicated controls are
ill-conditioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import linalg as sla
from scipy.stats import norm

from .errors import EstimationError, RankError, ValidationError
from .panel import Panel
from .stacking import StackedDesign, TractFilter, build_stack

STATIC = "static"
DYNAMIC = "dynamic"

POST_WINDOW = (4, 7)

#: Event times whose trailing 5-year average mixes pre- and post-adoption
#: years; flagged in plot exports.
PARTIAL_EVENT_TIMES = (0, 1, 2, 3)


@dataclass(frozen=True)
class ATTEstimate:
    value: float
    std_error: float
    p_value: float
    window: tuple[int, int] = POST_WINDOW

    def __post_init__(self):
        if self.std_error < 0:
            raise ValidationError("standard error must be nonnegative")

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        z = norm.ppf(0.5 + level / 2)
        return (self.value - z * self.std_error, self.value + z * self.std_error)


@dataclass(frozen=True)
class _DesignHandle:
    """Immutable estimation byproducts kept for downstream inference."""

    matrix: np.ndarray            # X, n x k
    weights: np.ndarray           # regression weights Q, n
    residuals: np.ndarray         # y - Xb, n
    tract_ids: tuple[str, ...]
    data_years: np.ndarray
    bread: np.ndarray             # (X'WX)^{-1}, k x k


@dataclass(frozen=True)
class EventStudyFit:
    terms: tuple[str, ...]
    coefficients: Mapping[str, float]
    covariance: np.ndarray
    spec: str
    window: tuple[int, int]
    n_rows: int
    design: _DesignHandle
    locations: Mapping[str, tuple[float, float]]

    def coef(self, term: str) -> float:
        return self.coefficients[term]

    def se(self, term: str) -> float:
        i = self.terms.index(term)
        return math.sqrt(max(0.0, self.covariance[i, i]))

    def gamma(self) -> dict[int, float]:
        """Event-time coefficients, with the omitted category at zero."""
        out = {-1: 0.0}
        for term, value in self.coefficients.items():
            if term.startswith("gamma_"):
                out[int(term.removeprefix("gamma_"))] = value
        return dict(sorted(out.items()))

    def replace_covariance(self, covariance: np.ndarray) -> "EventStudyFit":
        covariance = np.asarray(covariance, dtype=float)
        if covariance.shape != (len(self.terms),) * 2:
            raise ValidationError("covariance shape does not match terms")
        return replace(self, covariance=covariance)

    def coefficient_table(self) -> pd.DataFrame:
        rows = []
        for i, term in enumerate(self.terms):
            est = self.coefficients[term]
            se = math.sqrt(max(0.0, self.covariance[i, i]))
            p = _normal_p(est, se)
            rows.append((term, est, se, p))
        return pd.DataFrame(rows, columns=["term", "estimate", "se", "p"])


def _normal_p(estimate: float, se: float) -> float:
    if se == 0:
        return 1.0 if estimate == 0 else 0.0
    return float(2 * norm.sf(abs(estimate) / se))


def _build_matrix(
    design: StackedDesign,
    spec: str,
    dummy: Mapping[str, float] | None = None,
    interaction: str | None = None,
) -> tuple[np.ndarray, list[str]]:
    frame = design.frame
    d = frame["treated"].to_numpy(dtype=float)
    e = frame["event_time"].to_numpy(dtype=int)
    present = sorted(set(int(t) for t in e))
    post_lo, post_hi = POST_WINDOW

    columns: list[np.ndarray] = []
    names: list[str] = []
    for t in present:
        columns.append((e == t).astype(float))
        names.append(f"delta_{t}")
    columns.append(d)
    names.append("d")
    treatment_names = ["d"]

    if spec == STATIC:
        in_post = (post_lo <= e) & (e <= post_hi)
        columns.append(d * in_post)
        names.append("beta")
        treatment_names.append("beta")
        gamma_times = [t for t in present if t != -1 and not (post_lo <= t <= post_hi)]
    elif spec == DYNAMIC:
        gamma_times = [t for t in present if t != -1]
    else:
        raise ValidationError(f"unknown spec {spec!r}")
    for t in gamma_times:
        columns.append(d * (e == t))
        names.append(f"gamma_{t}")
        treatment_names.append(f"gamma_{t}")

    if dummy is not None:
        z = np.array([dummy[t] for t in frame["tract_id"]], dtype=float)
        base = dict(zip(names, columns))
        if interaction == "full_interaction":
            to_interact = treatment_names
        elif interaction == "event_time_control":
            to_interact = [f"delta_{t}" for t in present]
        else:
            raise ValidationError(f"unknown interaction mode {interaction!r}")
        for name in to_interact:
            column = base[name] * z
            if not column.any():
                continue  # dummy identically zero on this term: nothing to add
            columns.append(column)
            names.append(f"x_{name}")

    return np.column_stack(columns), names


def _solve_wls(
    X: np.ndarray, y: np.ndarray, w: np.ndarray, names: Sequence[str]
) -> tuple[np.ndarray, np.ndarray]:
    """Solve min ||W^(1/2)(y - Xb)|| via SVD; raises RankError when deficient."""
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw
    coef, _, rank, _ = np.linalg.lstsq(Xw, yw, rcond=None)
    if rank < X.shape[1]:
        # identify offending columns by QR with column pivoting
        _, _, pivots = sla.qr(Xw, mode="economic", pivoting=True)
        collinear = sorted(names[i] for i in pivots[rank:])
        raise RankError(
            f"design matrix rank {rank} < {X.shape[1]}; "
            f"collinear term(s): {', '.join(collinear)}",
            terms=collinear,
        )
    return coef, Xw


def _hc0_covariance(X: np.ndarray, w: np.ndarray, resid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Heteroskedasticity-robust sandwich assuming independent rows."""
    Xw = X * w[:, None]
    bread = np.linalg.inv(X.T @ Xw)
    scores = Xw * resid[:, None]
    meat = scores.T @ scores
    return bread @ meat @ bread, bread


def fit_wls(
    design: StackedDesign,
    spec: str = STATIC,
    dummy: Mapping[str, float] | None = None,
    interaction: str | None = None,
) -> EventStudyFit:
    """Weighted least squares under the stacked design's Q weights.

    The default covariance treats rows as independent (use
    :func:`zonedid.inference.conley_covariance` for spatial-HAC inference).
    """
    if len(design.frame) == 0:
        raise ValidationError("empty design")
    lo, hi = design.window
    if not (lo <= -1 <= hi):
        raise ValidationError("window must contain the reference event time -1")
    X, names = _build_matrix(design, spec, dummy, interaction)
    y = design.frame["outcome"].to_numpy(dtype=float)
    w = design.frame["q_weight"].to_numpy(dtype=float)
    if (w <= 0).any():
        raise ValidationError("regression weights must be positive")
    coef, _ = _solve_wls(X, y, w, names)
    resid = y - X @ coef
    covariance, bread = _hc0_covariance(X, w, resid)
    handle = _DesignHandle(
        matrix=X,
        weights=w,
        residuals=resid,
        tract_ids=tuple(design.frame["tract_id"]),
        data_years=design.frame["data_year"].to_numpy(dtype=int),
        bread=bread,
    )
    return EventStudyFit(
        terms=tuple(names),
        coefficients=dict(zip(names, coef.tolist())),
        covariance=covariance,
        spec=spec,
        window=design.window,
        n_rows=len(y),
        design=handle,
        locations=design.locations,
    )


def aggregate_att(
    fit: EventStudyFit,
    window: tuple[int, int] = POST_WINDOW,
    prefix: str = "",
) -> ATTEstimate:
    """Equal average of the post-window coefficients with delta-method SE.

    For a static fit this is the pooled coefficient itself. ``prefix``
    selects interaction terms (e.g. "x_") so heterogeneity contrasts
    aggregate the same way.
    """
    if fit.spec == STATIC:
        name = f"{prefix}beta" if prefix else "beta"
        if name not in fit.coefficients:
            raise EstimationError(f"static fit has no {name!r} term")
        i = fit.terms.index(name)
        se = math.sqrt(max(0.0, fit.covariance[i, i]))
        value = fit.coefficients[name]
        return ATTEstimate(value, se, _normal_p(value, se), window)

    lo, hi = window
    wanted = [f"{prefix}gamma_{t}" for t in range(lo, hi + 1)]
    missing = [n for n in wanted if n not in fit.coefficients]
    if missing:
        raise EstimationError(f"missing post coefficient(s): {', '.join(missing)}")
    c = np.zeros(len(fit.terms))
    for name in wanted:
        c[fit.terms.index(name)] = 1.0 / len(wanted)
    value = float(sum(fit.coefficients[n] for n in wanted) / len(wanted))
    se = math.sqrt(max(0.0, c @ fit.covariance @ c))
    return ATTEstimate(value, se, _normal_p(value, se), window)


def share_of_change(att: float, observed_change: float) -> float:
    """What fraction of the observed change the estimated effect accounts for."""
    if observed_change == 0:
        raise ValidationError("observed change is zero")
    return att / observed_change


def subset_groups(
    panel: Panel,
    outcome: str,
    treated_filter: TractFilter | None = None,
    control_filter: TractFilter | None = None,
    window: tuple[int, int] | None = None,
) -> StackedDesign:
    """Rebuild the stack on restricted arms, refitting cohort weights.

    Filters are predicates over tract ids; closures over panel labels or
    attributes express restrictions like "2016 cohort only" or "baseline
    index below zero".
    """
    return build_stack(
        panel,
        outcome,
        weights=None,
        window=window,
        treated_filter=treated_filter,
        control_filter=control_filter,
    )


def interact_dummy(
    design: StackedDesign,
    dummy: Mapping[str, float],
    mode: str = "full_interaction",
    spec: str = DYNAMIC,
) -> EventStudyFit:
    """Refit with a tract-level dummy interacted into the specification.

    "full_interaction" crosses the dummy with every treatment term, so the
    x_-prefixed coefficients measure the treatment-effect contrast for
    dummy == 1 tracts. "event_time_control" crosses it with the event-time
    effects only, absorbing dummy-specific time shocks. A dummy that
    duplicates existing columns (e.g. identically one) raises
    :class:`RankError`.
    """
    missing = sorted({t for t in design.frame["tract_id"]} - set(dummy))
    if missing:
        raise ValidationError(f"dummy undefined for tract(s): {', '.join(missing[:5])}")
    return fit_wls(design, spec=spec, dummy=dummy, interaction=mode)


def attribute_dummy(panel: Panel, name: str, default: float = 0.0) -> dict[str, float]:
    """Tract dummy pulled from panel attributes."""
    return {t: panel.attributes.get(t, {}).get(name, default) for t in panel.tracts}
