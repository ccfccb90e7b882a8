"""Synthetic panel generator with known ground truth.

Tracts are scattered in compact city footprints (one designee city and one
finalist city per cohort, spaced far apart). Yearly latent outcomes are
built from tract levels and trends, a spatially correlated Gaussian field
with exponential covariance and optional AR(1) persistence, idiosyncratic
noise, and treatment effects applied at adoption. Observed outcomes are
exact trailing 5-year averages when averaging is on, mirroring how the
real outcome data arrive.

Everything is driven by one seed; identical specs produce byte-identical
panels. The recorded ground truth is the estimator's target: ATT(a, e) at
the observed (averaged) scale and the population-weighted post-window
aggregate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ValidationError
from .geo import ZoneAssignment, haversine_miles
from .panel import GroupLabel, Panel, PanelObservation

AVERAGING_YEARS = 5
EFFECT_HORIZON = 8  # profile indexed by event time 0..7


@dataclass(frozen=True)
class RingSpec:
    """Synthetic tract band around a zone border."""

    count: int
    overlap_share: float
    distance_range: tuple[float, float]
    pop_share_in_zone: float = 0.0


@dataclass(frozen=True)
class SpilloverSpec:
    """Rings of nearby tracts plus a linear effect decay from the border."""

    rings: Mapping[str, RingSpec] = field(
        default_factory=lambda: {
            "border": RingSpec(10, 0.5, (0.05, 0.35), 0.4),
            "outside_1mi": RingSpec(10, 0.0, (0.30, 1.0)),
            "outside_2mi": RingSpec(10, 0.0, (1.05, 2.0)),
        }
    )
    reach_miles: float = 1.0
    inside_depth_miles: float = 0.4


@dataclass(frozen=True)
class DGPSpec:
    """Generator configuration; the seed fully determines the output."""

    cohorts: tuple[int, ...] = (2014, 2015, 2016)
    n_designee: int = 20
    n_finalist: int = 40
    years: tuple[int, int] = (2009, 2023)
    effect_profiles: Mapping[str, tuple[float, ...]] = field(
        default_factory=lambda: {"y": (0.2,) * EFFECT_HORIZON}
    )
    baseline_level: float = 0.0
    baseline_sd: float = 0.3
    trend_mean: float = 0.02
    trend_sd: float = 0.0
    spatial_range_miles: float = 5.0
    spatial_sd: float = 0.1
    noise_sd: float = 0.05
    serial_rho: float = 0.0
    averaging: bool = True
    treated_extra_trend: float = 0.0
    attribute_name: str | None = None
    attribute_share: float = 0.5
    attribute_scales: tuple[float, float] = (1.0, 1.0)
    spillover: SpilloverSpec | None = None
    population_range: tuple[float, float] = (1000.0, 5000.0)
    city_radius_miles: float = 2.0
    city_spacing_miles: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.spatial_range_miles <= 0:
            raise ValidationError("spatial range must be positive")
        if not (0 <= self.serial_rho < 1):
            raise ValidationError("serial_rho must be in [0, 1)")
        for name, profile in self.effect_profiles.items():
            if len(profile) != EFFECT_HORIZON:
                raise ValidationError(
                    f"effect profile for {name!r} must cover event times 0..7"
                )


@dataclass(frozen=True)
class GroundTruth:
    """What the generator injected, at the scale the estimator sees."""

    effect_profiles: Mapping[str, tuple[float, ...]]
    att: Mapping[str, Mapping[tuple[int, int], float]]
    omega: Mapping[int, float]
    beta: Mapping[str, float]
    ring_att: Mapping[str, Mapping[str, float]]
    assignments: tuple[ZoneAssignment, ...]
    zones: Mapping[str, tuple[str, int]]
    spillover_reach: float | None


def observed_profile(profile: tuple[float, ...], e: int, averaging: bool) -> float:
    """Treatment effect at event time ``e`` on the observed outcome scale."""
    if e < 0:
        return 0.0
    if not averaging:
        return profile[min(e, EFFECT_HORIZON - 1)]
    window = range(e - AVERAGING_YEARS + 1, e + 1)
    return sum(profile[min(s, EFFECT_HORIZON - 1)] for s in window if s >= 0) / AVERAGING_YEARS


def _city_center(index: int, spacing: float) -> tuple[float, float]:
    # grid of city centers, degrees; spacing in miles converted at lat 34
    cols = 4
    row, col = divmod(index, cols)
    dlat = spacing / 69.0
    dlon = spacing / (69.0 * math.cos(math.radians(34.0)))
    return (-118.0 + col * dlon, 34.0 + row * dlat)


@dataclass(frozen=True)
class _Tract:
    tract_id: str
    role: str            # panel role: designee/finalist/neither
    cohort: int
    centroid: tuple[float, float]
    population: float
    effect_scale: float
    zone_id: str | None
    ring: str | None = None
    distance: float = 0.0
    overlap_share: float = 1.0
    pop_in_zone: float = 0.0
    attribute: float = 0.0


def _scatter(rng, center, radius_miles, n):
    """Uniform points in a disc of the given radius around (lon, lat)."""
    out = []
    for _ in range(n):
        r = radius_miles * math.sqrt(rng.uniform(0, 1))
        theta = rng.uniform(0, 2 * math.pi)
        dx, dy = r * math.cos(theta), r * math.sin(theta)
        lon = center[0] + dx / (69.0 * math.cos(math.radians(center[1])))
        lat = center[1] + dy / 69.0
        out.append((lon, lat))
    return out


def _build_tracts(spec: DGPSpec, rng) -> tuple[list[_Tract], dict[str, tuple[str, int]]]:
    tracts: list[_Tract] = []
    zones: dict[str, tuple[str, int]] = {}
    city = 0
    for a in spec.cohorts:
        dz, fz = f"dz{a}", f"fz{a}"
        zones[dz] = ("designee", a)
        zones[fz] = ("finalist", a)
        for side, zone_id, role, n in (
            ("d", dz, "designee", spec.n_designee),
            ("f", fz, "finalist", spec.n_finalist),
        ):
            center = _city_center(city, spec.city_spacing_miles)
            city += 1
            points = _scatter(rng, center, spec.city_radius_miles, n)
            for i, centroid in enumerate(points):
                pop = rng.uniform(*spec.population_range)
                attribute = float(rng.uniform(0, 1) < spec.attribute_share)
                scale = 0.0
                if role == "designee":
                    scale = spec.attribute_scales[int(attribute)] if spec.attribute_name else 1.0
                tracts.append(
                    _Tract(
                        tract_id=f"{side}{a}_{i}",
                        role=role,
                        cohort=a,
                        centroid=centroid,
                        population=pop,
                        effect_scale=scale,
                        zone_id=zone_id,
                        ring="inside",
                        distance=(spec.spillover.inside_depth_miles if spec.spillover else 0.3),
                        overlap_share=1.0,
                        pop_in_zone=pop,
                        attribute=attribute,
                    )
                )
            if spec.spillover is not None:
                for ring, rspec in spec.spillover.rings.items():
                    points = _scatter(rng, center, spec.city_radius_miles, rspec.count)
                    for j, centroid in enumerate(points):
                        pop = rng.uniform(*spec.population_range)
                        distance = rng.uniform(*rspec.distance_range)
                        decay = max(0.0, 1.0 - distance / spec.spillover.reach_miles)
                        tracts.append(
                            _Tract(
                                tract_id=f"{side}{a}_{ring}_{j}",
                                role="neither",
                                cohort=a,
                                centroid=centroid,
                                population=pop,
                                effect_scale=decay if side == "d" else 0.0,
                                zone_id=zone_id,
                                ring=ring,
                                distance=distance,
                                overlap_share=rspec.overlap_share,
                                pop_in_zone=rspec.pop_share_in_zone * pop,
                                attribute=0.0,
                            )
                        )
    return tracts, zones


def generate(spec: DGPSpec) -> tuple[Panel, GroundTruth]:
    """Draw one synthetic panel and its ground truth."""
    rng = np.random.default_rng(spec.seed)
    tracts, zones = _build_tracts(spec, rng)
    n = len(tracts)

    y0, y1 = spec.years
    latent_years = list(range(y0 - (AVERAGING_YEARS - 1 if spec.averaging else 0), y1 + 1))

    # exponential-covariance field over tract centroids
    if spec.spatial_sd > 0:
        coords = [t.centroid for t in tracts]
        dist = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                dist[i, j] = dist[j, i] = haversine_miles(coords[i], coords[j])
        cov = spec.spatial_sd**2 * np.exp(-dist / spec.spatial_range_miles)
        cov[np.diag_indices(n)] += 1e-10 * spec.spatial_sd**2
        chol = np.linalg.cholesky(cov)
    else:
        chol = np.zeros((n, n))

    outcomes = sorted(spec.effect_profiles)
    latent: dict[str, np.ndarray] = {}
    for name in outcomes:
        profile = spec.effect_profiles[name]
        levels = spec.baseline_level + spec.baseline_sd * rng.standard_normal(n)
        trends = spec.trend_mean + spec.trend_sd * rng.standard_normal(n)
        values = np.zeros((n, len(latent_years)))
        shock = chol @ rng.standard_normal(n)
        for k, year in enumerate(latent_years):
            if k > 0:
                fresh = chol @ rng.standard_normal(n)
                shock = spec.serial_rho * shock + math.sqrt(1 - spec.serial_rho**2) * fresh
            noise = spec.noise_sd * rng.standard_normal(n)
            for i, tract in enumerate(tracts):
                value = levels[i] + trends[i] * (year - y0) + shock[i] + noise[i]
                if tract.role == "designee":
                    value += spec.treated_extra_trend * (year - y0)
                e = year - tract.cohort
                if tract.effect_scale != 0.0 and e >= 0:
                    value += tract.effect_scale * profile[min(e, EFFECT_HORIZON - 1)]
                values[i, k] = value
        latent[name] = values

    observations = []
    labels = {}
    zone_pop = {}
    attributes: dict[str, dict[str, float]] = {}
    year_index = {year: k for k, year in enumerate(latent_years)}
    for i, tract in enumerate(tracts):
        if tract.role == "neither":
            labels[tract.tract_id] = GroupLabel("neither")
        else:
            labels[tract.tract_id] = GroupLabel(tract.role, tract.zone_id, tract.cohort)
        zone_pop[tract.tract_id] = tract.pop_in_zone if tract.pop_in_zone > 0 else tract.population
        if spec.attribute_name is not None:
            attributes[tract.tract_id] = {spec.attribute_name: tract.attribute}
        for year in range(y0, y1 + 1):
            k = year_index[year]
            if spec.averaging:
                obs_values = {
                    name: float(latent[name][i, k - AVERAGING_YEARS + 1 : k + 1].mean())
                    for name in outcomes
                }
            else:
                obs_values = {name: float(latent[name][i, k]) for name in outcomes}
            observations.append(
                PanelObservation(
                    tract.tract_id, year, obs_values, tract.population, tract.centroid
                )
            )

    panel = Panel(tuple(observations), labels, (-5, 7), zone_pop, attributes)
    truth = _ground_truth(spec, tracts, zones)
    return panel, truth


def _ground_truth(spec: DGPSpec, tracts: list[_Tract], zones) -> GroundTruth:
    designees = [t for t in tracts if t.role == "designee"]
    pop_by_cohort: dict[int, float] = {}
    for t in designees:
        pop_by_cohort[t.cohort] = pop_by_cohort.get(t.cohort, 0.0) + t.pop_in_zone
    total = sum(pop_by_cohort.values())
    omega = {a: p / total for a, p in pop_by_cohort.items()}

    att: dict[str, dict[tuple[int, int], float]] = {}
    beta: dict[str, float] = {}
    ring_att: dict[str, dict[str, float]] = {}
    lo, hi = -5, 7
    for name, profile in spec.effect_profiles.items():
        att[name] = {}
        for a in spec.cohorts:
            cohort = [t for t in designees if t.cohort == a]
            wsum = sum(t.pop_in_zone for t in cohort)
            mean_scale = sum(t.pop_in_zone * t.effect_scale for t in cohort) / wsum
            for e in range(lo, hi + 1):
                att[name][(a, e)] = mean_scale * observed_profile(profile, e, spec.averaging)
        beta[name] = true_beta_from(att[name], omega)

        rings: dict[str, float] = {}
        post_mean = sum(
            observed_profile(profile, e, spec.averaging) for e in range(4, 8)
        ) / 4
        by_ring: dict[str, list[_Tract]] = {}
        for t in tracts:
            if t.ring is not None and t.tract_id.startswith("d"):
                by_ring.setdefault(t.ring, []).append(t)
        for ring, members in by_ring.items():
            weights = [
                t.pop_in_zone if ring in ("inside", "border") else t.population
                for t in members
            ]
            wsum = sum(weights)
            rings[ring] = (
                sum(w * t.effect_scale for w, t in zip(weights, members)) / wsum * post_mean
            )
        ring_att[name] = rings

    assignments = tuple(
        ZoneAssignment(
            tract_id=t.tract_id,
            zone_id=t.zone_id,
            area_overlap_share=t.overlap_share,
            pop_in_zone=t.pop_in_zone,
            ring=t.ring,
            centroid_border_distance=t.distance,
            centroid_inside=(t.ring == "inside"),
        )
        for t in tracts
        if t.zone_id is not None and t.ring is not None
    )
    return GroundTruth(
        effect_profiles=dict(spec.effect_profiles),
        att=att,
        omega=omega,
        beta=beta,
        ring_att=ring_att,
        assignments=assignments,
        zones=zones,
        spillover_reach=spec.spillover.reach_miles if spec.spillover else None,
    )


def true_beta_from(att: Mapping[tuple[int, int], float], omega: Mapping[int, float]) -> float:
    """Population-weighted post-window aggregate of injected effects."""
    total = 0.0
    for e in range(4, 8):
        for a, share in omega.items():
            total += share * att[(a, e)]
    return total / 4


def true_beta(truth: GroundTruth, outcome: str = "y") -> float:
    return truth.beta[outcome]


def spec_from_dict(raw: Mapping) -> DGPSpec:
    """Build a DGPSpec from parsed config (tuples coerced, rings nested)."""
    data = dict(raw)
    if "cohorts" in data:
        data["cohorts"] = tuple(int(a) for a in data["cohorts"])
    if "years" in data:
        data["years"] = tuple(int(y) for y in data["years"])
    if "effect_profiles" in data:
        data["effect_profiles"] = {
            name: tuple(float(v) for v in profile)
            for name, profile in data["effect_profiles"].items()
        }
    for key in ("attribute_scales", "population_range"):
        if key in data:
            data[key] = tuple(float(v) for v in data[key])
    if data.get("spillover"):
        sp = dict(data["spillover"])
        if "rings" in sp:
            sp["rings"] = {
                ring: RingSpec(
                    count=int(r["count"]),
                    overlap_share=float(r.get("overlap_share", 0.0)),
                    distance_range=tuple(float(v) for v in r["distance_range"]),
                    pop_share_in_zone=float(r.get("pop_share_in_zone", 0.0)),
                )
                for ring, r in sp["rings"].items()
            }
        data["spillover"] = SpilloverSpec(**sp)
    return DGPSpec(**data)
