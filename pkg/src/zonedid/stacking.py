"""Stacked sub-experiment construction with population-corrective weights.

Each adoption cohort forms one sub-experiment: that cohort's designee
tracts against the pooled finalist tracts (every finalist appears once per
sub-experiment). Rows carry regression weights

    Q = omega(a) / (N_a / N)   for treated rows,
    Q = omega(a)               for control rows,

where omega(a) is the cohort's share of treated population, times a
per-tract unit weight (population inside the zone) normalized to mean one
within each (sub-experiment, arm) cell. The mean-one normalization keeps
the treated Q-mass share of each sub-experiment equal to omega(a) at every
event time, which is what makes the pooled WLS coefficient target the
population-weighted ATT.

Event time -1 rows are present in the stack; omitting the reference
category is the estimator's concern.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping

import pandas as pd

from .errors import ValidationError
from .panel import Panel, ROLE_DESIGNEE, ROLE_FINALIST, event_time

TractFilter = Callable[[str], bool]

STACK_COLUMNS = (
    "sub_experiment",
    "tract_id",
    "treated",
    "event_time",
    "data_year",
    "outcome",
    "q_weight",
    "unit_weight",
)


@dataclass(frozen=True)
class StackedRow:
    sub_experiment: int
    tract_id: str
    treated: int
    event_time: int
    outcome: float
    q_weight: float
    unit_weight: float


@dataclass(frozen=True)
class CohortWeights:
    """Population shares and tract counts for the treated cohorts."""

    omega: Mapping[int, float]
    n_designee: Mapping[int, int]
    pop_designee: Mapping[int, float]

    @property
    def cohorts(self) -> tuple[int, ...]:
        return tuple(sorted(self.omega))

    @property
    def n_total(self) -> int:
        return sum(self.n_designee.values())

    @property
    def pop_total(self) -> float:
        return sum(self.pop_designee.values())

    def __post_init__(self):
        total = sum(self.omega.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"cohort shares sum to {total}, expected 1")
        for a, share in self.omega.items():
            if share <= 0:
                raise ValidationError(f"cohort {a}: nonpositive share {share}")


@dataclass(frozen=True)
class StackedDesign:
    """Pooled sub-experiment dataset ready for weighted least squares."""

    frame: pd.DataFrame
    outcome: str
    window: tuple[int, int]
    weights: CohortWeights
    locations: Mapping[str, tuple[float, float]]

    @property
    def rows(self) -> tuple[StackedRow, ...]:
        return tuple(
            StackedRow(
                int(r.sub_experiment),
                r.tract_id,
                int(r.treated),
                int(r.event_time),
                float(r.outcome),
                float(r.q_weight),
                float(r.unit_weight),
            )
            for r in self.frame.itertuples(index=False)
        )

    def to_csv(self, path: str | Path) -> None:
        self.frame.to_csv(path, index=False)


def cohort_weights(
    panel: Panel,
    treated_filter: TractFilter | None = None,
    cohorts: tuple[int, ...] | None = None,
) -> CohortWeights:
    """Population shares omega(a) over the designee cohorts.

    Populations are the tract unit weights (population inside the zone when
    known). ``cohorts`` restricts or checks the adoption years; an empty
    cohort is an error.
    """
    pops: dict[int, float] = {}
    counts: dict[int, int] = {}
    for tract in panel.tracts_with_role(ROLE_DESIGNEE):
        if treated_filter is not None and not treated_filter(tract):
            continue
        year = panel.label(tract).adoption_year
        pops[year] = pops.get(year, 0.0) + panel.unit_weight(tract)
        counts[year] = counts.get(year, 0) + 1
    wanted = cohorts if cohorts is not None else tuple(sorted(pops))
    missing = [a for a in wanted if counts.get(a, 0) == 0]
    if missing or not wanted:
        raise ValidationError(f"empty designee cohort(s): {missing or 'all'}")
    total = sum(pops[a] for a in wanted)
    if total <= 0:
        raise ValidationError("treated population is zero")
    return CohortWeights(
        omega={a: pops[a] / total for a in wanted},
        n_designee={a: counts[a] for a in wanted},
        pop_designee={a: pops[a] for a in wanted},
    )


def build_stack(
    panel: Panel,
    outcome: str,
    weights: CohortWeights | None = None,
    window: tuple[int, int] | None = None,
    treated_filter: TractFilter | None = None,
    control_filter: TractFilter | None = None,
) -> StackedDesign:
    """Assemble the stacked design for one outcome.

    Treated rows are each cohort's designee tracts; control rows are the
    pooled finalist tracts, repeated in every sub-experiment. Cohort
    weights are refitted on the (possibly filtered) treated set when not
    supplied. Raises when a cohort's event window needs years the panel
    does not have, naming the cohort and years, or when either arm is
    empty.
    """
    window = window or panel.window
    lo, hi = window
    if lo > hi:
        raise ValidationError(f"bad window {window}")

    treated = [
        t
        for t in panel.tracts_with_role(ROLE_DESIGNEE)
        if treated_filter is None or treated_filter(t)
    ]
    controls = [
        t
        for t in panel.tracts_with_role(ROLE_FINALIST)
        if control_filter is None or control_filter(t)
    ]
    if not treated:
        raise ValidationError("treated arm is empty after filtering")
    if not controls:
        raise ValidationError("control arm is empty after filtering")

    if weights is None:
        weights = cohort_weights(panel, treated_filter=treated_filter)

    years = set(panel.years)
    for a in weights.cohorts:
        needed = [a + e for e in range(lo, hi + 1)]
        absent = [y for y in needed if y not in years]
        if absent:
            raise ValidationError(
                f"cohort {a}: window {window} needs missing data years {absent}"
            )

    treated_by_cohort: dict[int, list[str]] = {a: [] for a in weights.cohorts}
    for tract in treated:
        a = panel.label(tract).adoption_year
        if a in treated_by_cohort:
            treated_by_cohort[a].append(tract)

    n_total = weights.n_total
    records = []
    locations: dict[str, tuple[float, float]] = {}
    for a in weights.cohorts:
        omega = weights.omega[a]
        q_treated = omega / (weights.n_designee[a] / n_total)
        q_control = omega
        arms = (
            (treated_by_cohort[a], 1, q_treated),
            (controls, 0, q_control),
        )
        for tracts, is_treated, q_base in arms:
            unit = {t: panel.unit_weight(t) for t in tracts}
            mean_unit = sum(unit.values()) / len(unit)
            if mean_unit <= 0:
                raise ValidationError(
                    f"cohort {a} arm treated={is_treated}: nonpositive unit weights"
                )
            for tract in tracts:
                u = unit[tract] / mean_unit
                for e in range(lo, hi + 1):
                    year = a + e
                    obs = panel.get(tract, year)
                    if obs is None:
                        raise ValidationError(f"tract {tract}: no observation for {year}")
                    value = obs.outcome(outcome)
                    if value is None:
                        raise ValidationError(
                            f"tract {tract}: outcome {outcome!r} missing in {year}"
                        )
                    locations[tract] = obs.centroid
                    records.append(
                        (a, tract, is_treated, e, year, value, q_base * u, unit[tract])
                    )

    frame = pd.DataFrame.from_records(records, columns=STACK_COLUMNS)
    return StackedDesign(frame, outcome, window, weights, locations)


def with_outcome(design: StackedDesign, panel: Panel, outcome: str) -> StackedDesign:
    """Swap the outcome column of an existing stack without re-deriving weights."""
    frame = design.frame.copy()
    values = []
    for tract, year in zip(frame["tract_id"], frame["data_year"]):
        obs = panel.get(tract, int(year))
        value = obs.outcome(outcome) if obs is not None else None
        if value is None:
            raise ValidationError(f"tract {tract}: outcome {outcome!r} missing in {year}")
        values.append(value)
    frame["outcome"] = values
    return replace(design, frame=frame, outcome=outcome)
