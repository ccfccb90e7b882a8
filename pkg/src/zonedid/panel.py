"""Tract-by-period panel: data model, CSV ingestion, crosswalk averaging,
and balanced-panel enforcement.

Each ``data_year`` denotes the final year of a trailing 5-year average; no
disaggregation happens here (see :mod:`zonedid.dynamics` for that). Panels
are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import RowError, SchemaError, ValidationError

ROLE_DESIGNEE = "designee"
ROLE_FINALIST = "finalist"
ROLE_NEITHER = "neither"
ROLES = (ROLE_DESIGNEE, ROLE_FINALIST, ROLE_NEITHER)

DEFAULT_WINDOW = (-5, 7)

#: Outcomes constrained to [0, 1]. Names starting with "share_" or ending in
#: "_rate"/"_ratio" are treated as rates as well.
RATE_OUTCOMES = frozenset({"poverty_rate", "emp_pop_ratio"})

PRIMARY_OUTCOMES = ("poverty_rate", "log_median_income", "emp_pop_ratio")


def _is_rate_outcome(name: str) -> bool:
    return (
        name in RATE_OUTCOMES
        or name.startswith("share_")
        or name.endswith("_rate")
        or name.endswith("_ratio")
    )


@dataclass(frozen=True)
class PanelObservation:
    """One tract at one data year.

    ``outcomes`` maps outcome name to value; missing outcomes are simply
    absent from the map. ``centroid`` is (longitude, latitude) in decimal
    degrees and ``population`` is the 2010 baseline count.
    """

    tract_id: str
    data_year: int
    outcomes: Mapping[str, float]
    population: float
    centroid: tuple[float, float]

    def outcome(self, name: str) -> float | None:
        value = self.outcomes.get(name)
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return None
        return value


@dataclass(frozen=True)
class GroupLabel:
    """A tract's relationship to a policy zone.

    ``adoption_year`` is the designation year for designees and,
    symmetrically, the application round for finalists; it is present
    exactly when ``role`` is not "neither".
    """

    role: str
    zone_id: str | None = None
    adoption_year: int | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown role {self.role!r}; expected one of {ROLES}")
        if (self.role != ROLE_NEITHER) != (self.adoption_year is not None):
            raise ValidationError(
                f"adoption_year must be present exactly when role is not "
                f"{ROLE_NEITHER!r} (got role={self.role!r}, "
                f"adoption_year={self.adoption_year!r})"
            )


@dataclass(frozen=True)
class Panel:
    """Immutable collection of observations plus tract-level labels.

    ``zone_population`` optionally maps tract_id to the population living
    inside the overlapping zone (used as unit weights downstream; falls back
    to full tract population when absent). ``attributes`` holds static
    tract-level covariates used by heterogeneity analyses.
    """

    observations: tuple[PanelObservation, ...]
    labels: Mapping[str, GroupLabel]
    window: tuple[int, int] = DEFAULT_WINDOW
    zone_population: Mapping[str, float] = field(default_factory=dict)
    attributes: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for obs in self.observations:
            key = (obs.tract_id, obs.data_year)
            if key in seen:
                raise ValidationError(f"duplicate observation for {key}")
            seen.add(key)

    @property
    def years(self) -> tuple[int, ...]:
        return tuple(sorted({o.data_year for o in self.observations}))

    @property
    def tracts(self) -> tuple[str, ...]:
        return tuple(sorted({o.tract_id for o in self.observations}))

    def label(self, tract_id: str) -> GroupLabel:
        return self.labels.get(tract_id, GroupLabel(ROLE_NEITHER))

    def tracts_with_role(self, role: str) -> tuple[str, ...]:
        return tuple(t for t in self.tracts if self.label(t).role == role)

    def get(self, tract_id: str, data_year: int) -> PanelObservation | None:
        return self._index.get((tract_id, data_year))

    @property
    def _index(self) -> dict[tuple[str, int], PanelObservation]:
        idx = self.__dict__.get("_index_cache")
        if idx is None:
            idx = {(o.tract_id, o.data_year): o for o in self.observations}
            self.__dict__["_index_cache"] = idx
        return idx

    def unit_weight(self, tract_id: str) -> float:
        """Population-in-zone when known, full population otherwise."""
        w = self.zone_population.get(tract_id)
        if w is not None:
            return w
        for obs in self.observations:
            if obs.tract_id == tract_id:
                return obs.population
        raise KeyError(tract_id)

    def with_labels(self, labels: Mapping[str, GroupLabel]) -> "Panel":
        return replace(self, labels=dict(labels))

    def with_zone_population(self, zone_population: Mapping[str, float]) -> "Panel":
        return replace(self, zone_population=dict(zone_population))

    def with_outcome(self, name: str, values: Mapping[tuple[str, int], float]) -> "Panel":
        """Return a panel with an extra outcome column appended.

        ``values`` maps (tract_id, data_year) to the new value; observations
        without an entry keep the outcome missing.
        """
        new_obs = []
        for obs in self.observations:
            value = values.get((obs.tract_id, obs.data_year))
            if value is None:
                new_obs.append(obs)
            else:
                outcomes = dict(obs.outcomes)
                outcomes[name] = value
                new_obs.append(replace(obs, outcomes=outcomes))
        return replace(self, observations=tuple(new_obs))


@dataclass(frozen=True)
class PanelSchema:
    """Column-name map for delimited panel files.

    ``outcomes`` maps internal outcome names to file column names; the same
    convention applies to ``attributes``. ``pop_in_zone`` is optional and
    feeds :attr:`Panel.zone_population` when present.
    """

    tract_id: str = "tract_id"
    year: str = "year"
    population: str = "population"
    lon: str = "lon"
    lat: str = "lat"
    role: str = "role"
    zone_id: str = "zone_id"
    adoption_year: str = "adoption_year"
    outcomes: Mapping[str, str] = field(
        default_factory=lambda: {name: name for name in PRIMARY_OUTCOMES}
    )
    attributes: Mapping[str, str] = field(default_factory=dict)
    pop_in_zone: str | None = "pop_in_zone"
    delimiter: str = ","

    def required_columns(self) -> list[str]:
        base = [
            self.tract_id,
            self.year,
            self.population,
            self.lon,
            self.lat,
            self.role,
            self.zone_id,
            self.adoption_year,
        ]
        return base + sorted(self.outcomes.values())


def event_time(data_year: int, adoption_year: int) -> int:
    """Event time, zero at the year of adoption."""
    return data_year - adoption_year


def crosswalk_average(
    values: Iterable[tuple[float | None, float, bool]],
) -> float | None:
    """Weighted mean over the non-missing entries of a crosswalk.

    Each entry is ``(source_value, weight, missing_flag)``. Returns None
    when every entry is missing or the non-missing weight totals zero.
    Weights must be nonnegative.
    """
    total = 0.0
    weight_sum = 0.0
    for value, weight, missing in values:
        if weight < 0:
            raise ValidationError(f"negative crosswalk weight {weight}")
        if missing:
            continue
        if value is None:
            raise ValidationError("non-missing entry has no value")
        total += weight * value
        weight_sum += weight
    if weight_sum == 0.0:
        return None
    return total / weight_sum


def enforce_balance(
    panel: Panel,
    required_outcomes: Iterable[str],
    years: Sequence[int] | None = None,
) -> tuple[Panel, dict[str, str]]:
    """Drop tracts missing any required outcome in any study-window year.

    Returns the balanced panel and a map from dropped tract_id to a short
    reason (first missing outcome-year found). ``years`` defaults to every
    data year present in the panel.
    """
    required = tuple(required_outcomes)
    study_years = tuple(years) if years is not None else panel.years
    dropped: dict[str, str] = {}
    for tract in panel.tracts:
        for year in study_years:
            obs = panel.get(tract, year)
            if obs is None:
                dropped[tract] = f"no observation for {year}"
                break
            missing = [name for name in required if obs.outcome(name) is None]
            if missing:
                dropped[tract] = f"missing {missing[0]} in {year}"
                break
    kept = tuple(o for o in panel.observations if o.tract_id not in dropped)
    labels = {t: lbl for t, lbl in panel.labels.items() if t not in dropped}
    zone_pop = {t: v for t, v in panel.zone_population.items() if t not in dropped}
    attrs = {t: a for t, a in panel.attributes.items() if t not in dropped}
    balanced = Panel(kept, labels, panel.window, zone_pop, attrs)
    return balanced, dropped


def _parse_float(raw: str, column: str, row_num: int, errors: list[str]) -> float | None:
    text = raw.strip() if raw is not None else ""
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        errors.append(f"row {row_num}: cannot parse {column}={raw!r} as a number")
        return None


def load_panel(
    source: str | Path,
    schema: PanelSchema | None = None,
    window: tuple[int, int] = DEFAULT_WINDOW,
) -> Panel:
    """Load a panel from a delimited text file (UTF-8, header row).

    Raises :class:`SchemaError` when a required column is absent and
    :class:`RowError` listing row numbers for unparseable or invalid rows.
    Conflicting labels for the same tract across rows are surfaced as row
    errors rather than resolved.
    """
    schema = schema or PanelSchema()
    path = Path(source)
    if not path.exists():
        raise ValidationError(f"panel file not found: {path}")

    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle, delimiter=schema.delimiter)
        header = reader.fieldnames or []
        missing_cols = [c for c in schema.required_columns() if c not in header]
        if missing_cols:
            raise SchemaError(f"missing required column(s): {', '.join(missing_cols)}")
        has_piz = schema.pop_in_zone is not None and schema.pop_in_zone in header
        attr_cols = {k: v for k, v in schema.attributes.items() if v in header}

        errors: list[str] = []
        rows: list[int] = []
        observations: list[PanelObservation] = []
        labels: dict[str, GroupLabel] = {}
        zone_pop: dict[str, float] = {}
        attributes: dict[str, dict[str, float]] = {}
        seen: set[tuple[str, int]] = set()

        for row_num, row in enumerate(reader, start=2):
            n_before = len(errors)
            tract = (row.get(schema.tract_id) or "").strip()
            if not tract:
                errors.append(f"row {row_num}: empty {schema.tract_id}")
            year = _parse_float(row.get(schema.year, ""), schema.year, row_num, errors)
            if year is not None and year != int(year):
                errors.append(f"row {row_num}: {schema.year} must be an integer")
                year = None
            population = _parse_float(
                row.get(schema.population, ""), schema.population, row_num, errors
            )
            if population is None and len(errors) == n_before:
                errors.append(f"row {row_num}: missing {schema.population}")
            elif population is not None and population < 0:
                errors.append(f"row {row_num}: negative population {population}")
            lon = _parse_float(row.get(schema.lon, ""), schema.lon, row_num, errors)
            lat = _parse_float(row.get(schema.lat, ""), schema.lat, row_num, errors)
            if lon is None or lat is None:
                if len(errors) == n_before:
                    errors.append(f"row {row_num}: missing centroid coordinates")

            outcomes: dict[str, float] = {}
            for name, column in schema.outcomes.items():
                value = _parse_float(row.get(column, ""), column, row_num, errors)
                if value is None:
                    continue
                if _is_rate_outcome(name) and not (0.0 <= value <= 1.0):
                    errors.append(
                        f"row {row_num}: {name}={value} outside [0, 1]"
                    )
                    continue
                outcomes[name] = value

            role = (row.get(schema.role) or ROLE_NEITHER).strip() or ROLE_NEITHER
            if role not in ROLES:
                errors.append(f"row {row_num}: unknown role {role!r}")
            zone = (row.get(schema.zone_id) or "").strip() or None
            adoption = _parse_float(
                row.get(schema.adoption_year, ""), schema.adoption_year, row_num, errors
            )
            if role != ROLE_NEITHER and adoption is None:
                errors.append(f"row {row_num}: role {role!r} requires {schema.adoption_year}")
            if role == ROLE_NEITHER and adoption is not None:
                errors.append(f"row {row_num}: role 'neither' cannot carry an adoption year")

            if len(errors) > n_before:
                rows.append(row_num)
                continue

            key = (tract, int(year))
            if key in seen:
                errors.append(f"row {row_num}: duplicate record for {key}")
                rows.append(row_num)
                continue
            seen.add(key)

            label = GroupLabel(role, zone, int(adoption) if adoption is not None else None)
            prior = labels.get(tract)
            if prior is not None and prior != label:
                errors.append(
                    f"row {row_num}: conflicting labels for tract {tract} "
                    f"({prior} vs {label})"
                )
                rows.append(row_num)
                continue
            labels[tract] = label

            if has_piz:
                piz = _parse_float(
                    row.get(schema.pop_in_zone, ""), schema.pop_in_zone, row_num, errors
                )
                if piz is not None:
                    zone_pop[tract] = piz
            for attr_name, column in attr_cols.items():
                value = _parse_float(row.get(column, ""), column, row_num, errors)
                if value is not None:
                    attributes.setdefault(tract, {})[attr_name] = value

            observations.append(
                PanelObservation(tract, int(year), outcomes, population, (lon, lat))
            )

    if errors:
        shown = errors[:20]
        suffix = "" if len(errors) <= 20 else f" (+{len(errors) - 20} more)"
        raise RowError("; ".join(shown) + suffix, rows=sorted(set(rows)))

    return Panel(tuple(observations), labels, window, zone_pop, attributes)


def write_panel_csv(panel: Panel, path: str | Path, schema: PanelSchema | None = None) -> None:
    """Write a panel back out in the same schema :func:`load_panel` reads."""
    schema = schema or PanelSchema()
    outcome_names = sorted({n for o in panel.observations for n in o.outcomes})
    attr_names = sorted({n for a in panel.attributes.values() for n in a})
    columns = [
        schema.tract_id,
        schema.year,
        schema.population,
        schema.lon,
        schema.lat,
        schema.role,
        schema.zone_id,
        schema.adoption_year,
    ]
    if schema.pop_in_zone:
        columns.append(schema.pop_in_zone)
    columns += [schema.outcomes.get(n, n) for n in outcome_names]
    columns += [schema.attributes.get(n, n) for n in attr_names]

    def fmt(value) -> str:
        return "" if value is None else repr(value) if isinstance(value, float) else str(value)

    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, delimiter=schema.delimiter)
        writer.writerow(columns)
        for obs in sorted(panel.observations, key=lambda o: (o.tract_id, o.data_year)):
            label = panel.label(obs.tract_id)
            row = [
                obs.tract_id,
                obs.data_year,
                fmt(obs.population),
                fmt(obs.centroid[0]),
                fmt(obs.centroid[1]),
                label.role,
                label.zone_id or "",
                "" if label.adoption_year is None else label.adoption_year,
            ]
            if schema.pop_in_zone:
                row.append(fmt(panel.zone_population.get(obs.tract_id)))
            row += [fmt(obs.outcome(n)) for n in outcome_names]
            attrs = panel.attributes.get(obs.tract_id, {})
            row += [fmt(attrs.get(n)) for n in attr_names]
            writer.writerow(row)


def write_dropped_report(dropped: Mapping[str, str], path: str | Path) -> None:
    """Emit the dropped-tract report as CSV (tract_id, reason)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["tract_id", "reason"])
        for tract in sorted(dropped):
            writer.writerow([tract, dropped[tract]])
