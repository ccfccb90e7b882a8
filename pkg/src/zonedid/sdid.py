"""Synthetic difference-in-differences with simplex-constrained unit
weights (no time weights) and placebo permutation inference.

For one zone, the treated trajectory (mean outcome per period over the
zone's tracts) is matched against a convex combination of donor tracts
plus a free intercept, fitted on the last few pre-adoption periods only;
earlier pre-periods are left out as goodness-of-fit checks. The simplex
program is solved by away-step Frank-Wolfe with exact line search, which
converges linearly on this quadratic. Inference draws placebo "treated"
sets from the donor pool, refits everything, and reports the dispersion of
placebo estimates. Per-zone series are pooled across zones by population
weight, treating zones as independent (they are in different cities).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConvergenceError, ValidationError
from .panel import Panel

DEFAULT_FIT_PERIODS = 3
MAX_ITER = 100_000
GAP_TOL = 1e-10


@dataclass(frozen=True)
class SdidProblem:
    """One zone's trajectory-matching problem on a common event-time grid."""

    event_times: tuple[int, ...]
    treated: np.ndarray
    donors: np.ndarray
    donor_ids: tuple[str, ...]
    fit_periods: int = DEFAULT_FIT_PERIODS

    def __post_init__(self):
        times = self.event_times
        if list(times) != sorted(times):
            raise ValidationError("event times must be ascending")
        if self.donors.shape != (len(self.donor_ids), len(times)):
            raise ValidationError("donor matrix shape does not match ids and periods")
        if self.treated.shape != (len(times),):
            raise ValidationError("treated trajectory length does not match periods")
        if len(self.donor_ids) < 1:
            raise ValidationError("need at least one donor")
        if len(self.fit_window) < self.fit_periods:
            raise ValidationError(
                f"need {self.fit_periods} pre-adoption periods, have {len(self.fit_window)}"
            )

    @property
    def pre_indices(self) -> tuple[int, ...]:
        return tuple(i for i, e in enumerate(self.event_times) if e < 0)

    @property
    def fit_window(self) -> tuple[int, ...]:
        """Indices of the last ``fit_periods`` pre-adoption periods."""
        pre = self.pre_indices
        return pre[-self.fit_periods:]


@dataclass(frozen=True)
class UnitWeights:
    weights: Mapping[str, float]
    intercept: float
    iterations: int
    gap: float
    objective_path: tuple[float, ...] = ()

    def __post_init__(self):
        values = np.array(list(self.weights.values()))
        if (values < -1e-12).any() or abs(values.sum() - 1.0) > 1e-9:
            raise ValidationError("unit weights must lie on the probability simplex")

    def vector(self, donor_ids: Sequence[str]) -> np.ndarray:
        return np.array([self.weights[d] for d in donor_ids])


def default_zeta(problem: SdidProblem, n_treated: int) -> float:
    """Ridge scale from the noise of first-differenced donor pre-periods."""
    pre = list(problem.pre_indices)
    if len(pre) < 2:
        return 0.0
    diffs = np.diff(problem.donors[:, pre], axis=1)
    sigma2 = float(np.var(diffs, ddof=1)) if diffs.size > 1 else 0.0
    return sigma2 * (n_treated * problem.fit_periods) ** 0.25


def _objective_parts(problem: SdidProblem, zeta: float):
    """Quadratic form of the intercept-profiled objective.

    Demeaning over the fit window absorbs the free intercept, leaving
    f(w) = w'Hw - 2b'w + c with H = DD' + zeta*T*I on the demeaned data.
    """
    idx = list(problem.fit_window)
    y = problem.treated[idx]
    D = problem.donors[:, idx]
    y_c = y - y.mean()
    D_c = D - D.mean(axis=1, keepdims=True)
    T = len(idx)
    H = D_c @ D_c.T + zeta * T * np.eye(len(problem.donor_ids))
    b = D_c @ y_c
    c = float(y_c @ y_c)
    return H, b, c


def solve_unit_weights(
    problem: SdidProblem,
    zeta: float = 0.0,
    tol: float = GAP_TOL,
    max_iter: int = MAX_ITER,
    track_objective: bool = False,
) -> UnitWeights:
    """Simplex-constrained ridge fit of donors to the treated pre-trajectory.

    Away-step Frank-Wolfe with exact line search, run to a duality gap of
    ``tol``; raises :class:`ConvergenceError` carrying the final gap if the
    iteration cap is hit.
    """
    if zeta < 0:
        raise ValidationError("regularization must be nonnegative")
    H, b, c = _objective_parts(problem, zeta)
    J = len(problem.donor_ids)

    w = np.full(J, 1.0 / J)
    path = []
    gap = float("inf")
    iterations = 0
    for iterations in range(1, max_iter + 1):
        grad = 2.0 * (H @ w - b)
        s = int(np.argmin(grad))
        gap = float(grad @ w - grad[s])
        if track_objective:
            path.append(float(w @ H @ w - 2 * b @ w + c))
        if gap <= tol:
            break

        active = np.flatnonzero(w > 0)
        v = int(active[np.argmax(grad[active])])
        fw_dir = -w.copy()
        fw_dir[s] += 1.0
        away_dir = w.copy()
        away_dir[v] -= 1.0
        # pick the steeper descent direction
        if grad @ fw_dir <= grad @ away_dir:
            d, step_max = fw_dir, 1.0
        else:
            d = away_dir
            step_max = w[v] / (1.0 - w[v]) if w[v] < 1.0 else float("inf")

        curvature = float(d @ H @ d)
        if curvature <= 0:
            step = step_max
            if not np.isfinite(step):
                break
        else:
            step = min(step_max, float(-(grad @ d) / (2.0 * curvature)))
        if step <= 0:
            break
        w = w + step * d
        w[w < 1e-15] = 0.0
        w = w / w.sum()
    else:
        raise ConvergenceError(
            f"simplex solver hit {max_iter} iterations (gap {gap:.3e})", gap=gap
        )
    if gap > tol:
        raise ConvergenceError(
            f"simplex solver stalled at gap {gap:.3e} after {iterations} iterations",
            gap=gap,
        )

    idx = list(problem.fit_window)
    intercept = float(
        (problem.treated[idx] - w @ problem.donors[:, idx]).mean()
    )
    return UnitWeights(
        weights=dict(zip(problem.donor_ids, w.tolist())),
        intercept=intercept,
        iterations=iterations,
        gap=gap,
        objective_path=tuple(path),
    )


def fit_error(problem: SdidProblem, weights: UnitWeights) -> float:
    """Sum of squared fit-window residuals at the solved weights."""
    idx = list(problem.fit_window)
    w = weights.vector(problem.donor_ids)
    resid = problem.treated[idx] - weights.intercept - w @ problem.donors[:, idx]
    return float(resid @ resid)


def sdid_event_study(
    problem: SdidProblem,
    weights: UnitWeights,
    window: tuple[int, int] = (-5, 7),
) -> dict[int, float]:
    """Treated-minus-synthetic gaps, normalized to zero at event time -1.

    Pre-window periods outside the fit window serve as goodness-of-fit
    checks; with a two-unit aggregate panel this equals the standard
    two-way dynamic event-study coefficients.
    """
    if -1 not in problem.event_times:
        raise ValidationError("event time -1 must be present for normalization")
    w = weights.vector(problem.donor_ids)
    gaps = problem.treated - w @ problem.donors
    ref = gaps[problem.event_times.index(-1)]
    lo, hi = window
    return {
        e: float(gaps[i] - ref)
        for i, e in enumerate(problem.event_times)
        if lo <= e <= hi
    }


def placebo_se(
    donor_ids: Sequence[str],
    donors: np.ndarray,
    event_times: Sequence[int],
    n_treated: int,
    replications: int = 100,
    seed: int = 0,
    zeta: float | None = None,
    fit_periods: int = DEFAULT_FIT_PERIODS,
    window: tuple[int, int] = (-5, 7),
    threads: int = 1,
) -> dict[int, float]:
    """Placebo standard error per event-study coefficient.

    Each replication draws ``n_treated`` placebo tracts from the donor
    pool without replacement, refits the full synthetic DiD on the rest,
    and records the coefficients; the per-coefficient standard deviation
    across replications is the standard error. Fully deterministic given
    the seed (the pool is sorted by id before drawing, so input order does
    not matter).
    """
    if replications < 2:
        raise ValidationError("placebo inference needs at least 2 replications")
    if len(donor_ids) <= n_treated:
        raise ValidationError(
            f"donor pool ({len(donor_ids)}) must exceed placebo treated count ({n_treated})"
        )
    order = np.argsort(np.asarray(donor_ids, dtype=object))
    ids = tuple(donor_ids[i] for i in order)
    pool = np.asarray(donors, dtype=float)[order]
    times = tuple(int(e) for e in event_times)
    children = np.random.SeedSequence(seed).spawn(replications)

    def one(rep: int) -> dict[int, float]:
        rng = np.random.default_rng(children[rep])
        chosen = rng.choice(len(ids), size=n_treated, replace=False)
        mask = np.zeros(len(ids), dtype=bool)
        mask[chosen] = True
        placebo_problem = SdidProblem(
            event_times=times,
            treated=pool[mask].mean(axis=0),
            donors=pool[~mask],
            donor_ids=tuple(d for d, m in zip(ids, mask) if not m),
            fit_periods=fit_periods,
        )
        z = default_zeta(placebo_problem, n_treated) if zeta is None else zeta
        weights = solve_unit_weights(placebo_problem, z)
        return sdid_event_study(placebo_problem, weights, window)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool_exec:
            results = list(pool_exec.map(one, range(replications)))
    else:
        results = [one(rep) for rep in range(replications)]

    out: dict[int, float] = {}
    for e in results[0]:
        values = np.array([r[e] for r in results])
        out[e] = float(values.std(ddof=1))
    return out


def aggregate_zones(
    series: Mapping[str, Mapping[int, float]],
    errors: Mapping[str, Mapping[int, float]],
    populations: Mapping[str, float],
) -> tuple[dict[int, float], dict[int, float]]:
    """Population-weighted pooling of per-zone event-study series.

    Pooled standard errors combine per-zone placebo SEs as the weighted
    root sum of squares, assuming independence across zones.
    """
    zones = sorted(series)
    if not zones:
        raise ValidationError("no zones to aggregate")
    windows = {tuple(sorted(series[z])) for z in zones}
    if len(windows) != 1:
        raise ValidationError("zones cover different event windows")
    total = sum(populations[z] for z in zones)
    if total <= 0:
        raise ValidationError("zone populations must be positive")
    shares = {z: populations[z] / total for z in zones}
    pooled: dict[int, float] = {}
    pooled_se: dict[int, float] = {}
    for e in sorted(next(iter(windows))):
        pooled[e] = sum(shares[z] * series[z][e] for z in zones)
        pooled_se[e] = float(
            np.sqrt(sum((shares[z] * errors[z][e]) ** 2 for z in zones))
        )
    return pooled, pooled_se


def build_problem(
    panel: Panel,
    treated_tracts: Iterable[str],
    donor_tracts: Iterable[str],
    outcome: str,
    adoption_year: int,
    window: tuple[int, int] = (-5, 7),
    fit_periods: int = DEFAULT_FIT_PERIODS,
) -> SdidProblem:
    """Assemble a zone problem from panel data.

    The treated trajectory is the population-weighted mean over the zone's
    tracts; donors enter one row each. Event times are clipped to the
    years the panel actually has.
    """
    treated_tracts = sorted(set(treated_tracts))
    donor_tracts = sorted(set(donor_tracts))
    overlap = set(treated_tracts) & set(donor_tracts)
    if overlap:
        raise ValidationError(f"donors overlap treated tracts: {sorted(overlap)[:5]}")
    if not treated_tracts:
        raise ValidationError("no treated tracts")
    years = set(panel.years)
    lo, hi = window
    times = [e for e in range(lo, hi + 1) if adoption_year + e in years]
    if not times:
        raise ValidationError("no overlap between window and panel years")

    def series(tract: str) -> np.ndarray:
        values = []
        for e in times:
            obs = panel.get(tract, adoption_year + e)
            value = obs.outcome(outcome) if obs is not None else None
            if value is None:
                raise ValidationError(f"tract {tract}: {outcome!r} missing at e={e}")
            values.append(value)
        return np.array(values)

    pops = np.array([panel.unit_weight(t) for t in treated_tracts])
    stacked = np.vstack([series(t) for t in treated_tracts])
    treated = pops @ stacked / pops.sum()
    donors = np.vstack([series(t) for t in donor_tracts])
    return SdidProblem(
        event_times=tuple(times),
        treated=treated,
        donors=donors,
        donor_ids=tuple(donor_tracts),
        fit_periods=fit_periods,
    )
