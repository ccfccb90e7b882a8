"""Neighborhood status index: an equal-weighted average of sign-oriented
z-scored outcomes, normalized to the treated-tract baseline distribution.

Poverty enters with a negative orientation so that a higher index always
means better neighborhood status. Normalization moments are population
weighted; the population defaults to designee tracts at the baseline year,
with a pooled designee+finalist convention available via ``IndexSpec``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError
from .panel import Panel, PanelObservation, ROLE_DESIGNEE, ROLE_FINALIST

DEFAULT_COMPONENTS = (
    ("poverty_rate", -1),
    ("log_median_income", +1),
    ("emp_pop_ratio", +1),
)


@dataclass(frozen=True)
class IndexSpec:
    components: tuple[tuple[str, int], ...]
    baseline_year: int
    normalization_roles: tuple[str, ...] = (ROLE_DESIGNEE,)

    def __post_init__(self):
        if not self.components:
            raise ValidationError("index needs at least one component")
        for name, sign in self.components:
            if sign not in (-1, 1):
                raise ValidationError(f"component {name}: sign must be +1 or -1")


def default_index_spec(panel: Panel, pooled: bool = False) -> IndexSpec:
    """Three-component index anchored at the earliest panel year."""
    roles = (ROLE_DESIGNEE, ROLE_FINALIST) if pooled else (ROLE_DESIGNEE,)
    return IndexSpec(DEFAULT_COMPONENTS, baseline_year=panel.years[0], normalization_roles=roles)


def fit_normalization(panel: Panel, spec: IndexSpec) -> dict[str, tuple[float, float]]:
    """Population-weighted mean and sd per component over the baseline population.

    Raises when the population is empty or any component has zero variance
    (naming the component).
    """
    baseline = [
        obs
        for obs in panel.observations
        if obs.data_year == spec.baseline_year
        and panel.label(obs.tract_id).role in spec.normalization_roles
    ]
    if not baseline:
        raise ValidationError(
            f"no observations for roles {spec.normalization_roles} at "
            f"baseline year {spec.baseline_year}"
        )
    norm: dict[str, tuple[float, float]] = {}
    for name, _ in spec.components:
        pairs = [
            (obs.outcome(name), obs.population)
            for obs in baseline
            if obs.outcome(name) is not None
        ]
        weight = sum(w for _, w in pairs)
        if not pairs or weight <= 0:
            raise ValidationError(f"component {name}: no weighted baseline data")
        mean = sum(v * w for v, w in pairs) / weight
        var = sum(w * (v - mean) ** 2 for v, w in pairs) / weight
        if var <= 0:
            raise ValidationError(f"component {name}: zero variance at baseline")
        norm[name] = (mean, math.sqrt(var))
    return norm


def compute_index(
    obs: PanelObservation,
    spec: IndexSpec,
    norm: dict[str, tuple[float, float]],
) -> float | None:
    """Index value for one observation, or None when a component is missing."""
    total = 0.0
    for name, sign in spec.components:
        value = obs.outcome(name)
        if value is None:
            return None
        mean, sd = norm[name]
        total += sign * (value - mean) / sd
    return total / len(spec.components)


def append_index(
    panel: Panel,
    spec: IndexSpec,
    name: str = "nsi",
) -> tuple[Panel, dict[str, tuple[float, float]]]:
    """Fit the normalization and append the index as an outcome column."""
    norm = fit_normalization(panel, spec)
    values = {}
    for obs in panel.observations:
        value = compute_index(obs, spec, norm)
        if value is not None:
            values[(obs.tract_id, obs.data_year)] = value
    return panel.with_outcome(name, values), norm
