"""Spatial-HAC covariance for the event-study WLS coefficients.

The sandwich is (X'WX)^{-1} M (X'WX)^{-1}, where M accumulates weighted
score cross-products over (i) every pair of observations belonging to the
same tract (clustering over time within units, including the duplicated
control rows across sub-experiments) and (ii) cross-tract pairs within a
distance cutoff, downweighted by a spatial kernel. By default cross-tract
pairs enter only when contemporaneous (same calendar year); the full
product kernel over all period pairs sits behind ``cross_serial``.

The Bartlett kernel K(d) = max(0, 1 - d / cutoff) is the default because
its spatial contribution is positive semidefinite; the uniform kernel can
produce an indefinite estimate, in which case negative eigenvalues are
clamped to zero and a warning is logged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError
from .estimator import EventStudyFit
from .geo import EARTH_RADIUS_MILES, haversine_miles

logger = logging.getLogger(__name__)

KERNEL_BARTLETT = "bartlett"
KERNEL_UNIFORM = "uniform"


@dataclass(frozen=True)
class KernelSpec:
    cutoff_miles: float = 10.0
    spatial_kernel: str = KERNEL_BARTLETT
    cross_serial: bool = False

    def __post_init__(self):
        if self.cutoff_miles <= 0:
            raise ValidationError("cutoff must be positive")
        if self.spatial_kernel not in (KERNEL_BARTLETT, KERNEL_UNIFORM):
            raise ValidationError(f"unknown spatial kernel {self.spatial_kernel!r}")

    def weight(self, distance: float) -> float:
        if distance > self.cutoff_miles:
            return 0.0
        if self.spatial_kernel == KERNEL_BARTLETT:
            return max(0.0, 1.0 - distance / self.cutoff_miles)
        return 1.0


def pairwise_within_cutoff(
    locations: Mapping[str, tuple[float, float]], cutoff_miles: float
) -> list[tuple[str, str, float]]:
    """All unordered location pairs within the great-circle cutoff.

    Candidates come from a KD-tree on the spherical embedding (chord
    radius covers the arc cutoff), then an exact haversine filter is
    applied, so the result equals the exhaustive scan.
    """
    if cutoff_miles <= 0:
        raise ValidationError("cutoff must be positive")
    names = sorted(locations)
    if len(names) < 2:
        return []
    coords = np.empty((len(names), 3))
    for i, name in enumerate(names):
        lon, lat = locations[name]
        rlon, rlat = math.radians(lon), math.radians(lat)
        coords[i] = (
            EARTH_RADIUS_MILES * math.cos(rlat) * math.cos(rlon),
            EARTH_RADIUS_MILES * math.cos(rlat) * math.sin(rlon),
            EARTH_RADIUS_MILES * math.sin(rlat),
        )
    chord = 2 * EARTH_RADIUS_MILES * math.sin(min(cutoff_miles, math.pi * EARTH_RADIUS_MILES) / (2 * EARTH_RADIUS_MILES))
    tree = cKDTree(coords)
    pairs = []
    for i, j in tree.query_pairs(chord * (1 + 1e-9) + 1e-9):
        a, b = (names[i], names[j]) if names[i] < names[j] else (names[j], names[i])
        d = haversine_miles(locations[a], locations[b])
        if d <= cutoff_miles:
            pairs.append((a, b, d))
    pairs.sort()
    return pairs


def _score_cells(fit: EventStudyFit):
    """Weighted scores aggregated to (tract, year) cells and tract totals."""
    handle = fit.design
    scores = handle.matrix * (handle.weights * handle.residuals)[:, None]
    tracts = sorted(set(handle.tract_ids))
    tract_index = {t: i for i, t in enumerate(tracts)}
    years = sorted(set(int(y) for y in handle.data_years))
    year_index = {y: i for i, y in enumerate(years)}
    k = scores.shape[1]
    cells = np.zeros((len(tracts), len(years), k))
    rows_t = np.fromiter((tract_index[t] for t in handle.tract_ids), int, len(scores))
    rows_y = np.fromiter((year_index[int(y)] for y in handle.data_years), int, len(scores))
    np.add.at(cells, (rows_t, rows_y), scores)
    return tracts, cells


def _sandwich(fit: EventStudyFit, meat: np.ndarray) -> tuple[np.ndarray, bool]:
    bread = fit.design.bread
    cov = bread @ meat @ bread
    cov = (cov + cov.T) / 2
    return psd_repair(cov)


def cluster_by_tract_covariance(fit: EventStudyFit) -> np.ndarray:
    """Sandwich clustering all observations of a tract together."""
    _, cells = _score_cells(fit)
    totals = cells.sum(axis=1)
    cov, _ = _sandwich(fit, totals.T @ totals)
    return cov


def conley_covariance(
    fit: EventStudyFit,
    locations: Mapping[str, tuple[float, float]] | None = None,
    kernel: KernelSpec | None = None,
) -> np.ndarray:
    """Spatial-HAC sandwich covariance for a fitted event study.

    ``locations`` defaults to the tract centroids recorded on the fit.
    The result is symmetrized and PSD-repaired if needed (logged).
    """
    kernel = kernel or KernelSpec()
    locations = locations if locations is not None else fit.locations
    tracts, cells = _score_cells(fit)
    missing = [t for t in tracts if t not in locations]
    if missing:
        raise ValidationError(f"missing centroid for tract(s): {', '.join(missing[:5])}")

    totals = cells.sum(axis=1)
    meat = totals.T @ totals  # all within-tract pairs, weight one

    pairs = pairwise_within_cutoff(
        {t: locations[t] for t in tracts}, kernel.cutoff_miles
    )
    if pairs:
        index = {t: i for i, t in enumerate(tracts)}
        K = np.zeros((len(tracts), len(tracts)))
        for a, b, d in pairs:
            K[index[a], index[b]] = K[index[b], index[a]] = kernel.weight(d)
        if kernel.cross_serial:
            meat = meat + totals.T @ K @ totals
        else:
            for y in range(cells.shape[1]):
                s = cells[:, y, :]
                meat = meat + s.T @ K @ s

    cov, clamped = _sandwich(fit, meat)
    if clamped:
        logger.warning(
            "spatial-HAC covariance was indefinite; negative eigenvalues clamped"
        )
    return cov


def psd_repair(matrix: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, bool]:
    """Clamp negative eigenvalues to zero; flags whether clamping occurred.

    A tiny negative eigenvalue within ``tol`` of zero (times the largest
    eigenvalue) counts as numerical noise and is clamped silently.
    """
    sym = (matrix + matrix.T) / 2
    eigvals, eigvecs = np.linalg.eigh(sym)
    floor = -tol * max(1.0, float(eigvals.max(initial=0.0)))
    if eigvals.min(initial=0.0) >= floor:
        return sym, False
    clamped = eigvecs @ np.diag(np.clip(eigvals, 0.0, None)) @ eigvecs.T
    return (clamped + clamped.T) / 2, True


def with_conley(
    fit: EventStudyFit,
    kernel: KernelSpec | None = None,
    locations: Mapping[str, tuple[float, float]] | None = None,
) -> EventStudyFit:
    """Return the fit with its covariance replaced by the spatial-HAC one."""
    return fit.replace_covariance(conley_covariance(fit, locations, kernel))
