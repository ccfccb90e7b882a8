"""Geometric apportionment of zone polygons to census geography.

Area work happens in a planar frame: callers project geographic
coordinates with :func:`project_lonlat` (a local sinusoidal projection,
equal-area on the sphere) before calling the planar operations. Distances
between tract centroids use great-circle (haversine) miles.

All functions here are pure over immutable geometry.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from shapely.geometry import Point, Polygon
from shapely.validation import explain_validity

from .errors import ValidationError

logger = logging.getLogger(__name__)

EARTH_RADIUS_MILES = 3958.7613

RING_INSIDE = "inside"
RING_BORDER = "border"
RING_OUTSIDE_1MI = "outside_1mi"
RING_OUTSIDE_2MI = "outside_2mi"
RING_BEYOND = "beyond"
RINGS = (RING_INSIDE, RING_BORDER, RING_OUTSIDE_1MI, RING_OUTSIDE_2MI, RING_BEYOND)

INSIDE_SHARE = 0.75
BORDER_SHARE = 0.25

#: Vertex-coordinate tolerance (projected units) below which polygon area
#: is treated as degenerate.
AREA_EPS = 1e-9


def _validate_ring(
    vertices: Sequence[tuple[float, float]], what: str, allow_degenerate: bool = False
) -> Polygon:
    if len(vertices) < 3:
        raise ValidationError(f"{what}: polygon needs at least 3 vertices")
    poly = Polygon(vertices)
    if not poly.is_valid:
        if allow_degenerate and poly.area <= AREA_EPS:
            return poly
        raise ValidationError(f"{what}: invalid polygon ({explain_validity(poly)})")
    return poly


@dataclass(frozen=True)
class ZonePolygon:
    """A policy-zone boundary; ``role`` is designee or finalist."""

    zone_id: str
    vertices: tuple[tuple[float, float], ...]
    role: str = "designee"

    def __post_init__(self):
        _validate_ring(self.vertices, f"zone {self.zone_id}")

    @property
    def shape(self) -> Polygon:
        return Polygon(self.vertices)


@dataclass(frozen=True)
class BlockRecord:
    """A census block with its parent tract and 2010 population."""

    block_id: str
    tract_id: str
    population: float
    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.population < 0:
            raise ValidationError(f"block {self.block_id}: negative population")
        # zero-area blocks are tolerated here; apportionment skips them
        _validate_ring(self.vertices, f"block {self.block_id}", allow_degenerate=True)

    @property
    def shape(self) -> Polygon:
        return Polygon(self.vertices)


@dataclass(frozen=True)
class ZoneAssignment:
    """A tract's relationship to one zone.

    ``centroid_border_distance`` is in miles; ``centroid_inside`` records
    whether the tract centroid falls within the zone boundary (needed for
    signed-distance summaries downstream).
    """

    tract_id: str
    zone_id: str
    area_overlap_share: float
    pop_in_zone: float
    ring: str
    centroid_border_distance: float
    centroid_inside: bool = False

    def __post_init__(self):
        if not (0.0 <= self.area_overlap_share <= 1.0):
            raise ValidationError(
                f"area_overlap_share {self.area_overlap_share} outside [0, 1]"
            )
        if self.ring not in RINGS:
            raise ValidationError(f"unknown ring {self.ring!r}")


def haversine_miles(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in miles between (lon, lat) points."""
    lon1, lat1 = math.radians(a[0]), math.radians(a[1])
    lon2, lat2 = math.radians(b[0]), math.radians(b[1])
    dlon = lon2 - lon1
    dlat = lat2 - lat1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_MILES * math.asin(min(1.0, math.sqrt(h)))


def project_lonlat(
    points: Iterable[tuple[float, float]], origin: tuple[float, float]
) -> list[tuple[float, float]]:
    """Project (lon, lat) points to a local equal-area plane in miles.

    Sinusoidal projection about ``origin``: x scales longitude by the
    cosine of each point's latitude, so areas are preserved on the sphere.
    Accurate at city scale; not intended for continental geometries.
    """
    lon0, lat0 = origin
    out = []
    for lon, lat in points:
        x = EARTH_RADIUS_MILES * math.radians(lon - lon0) * math.cos(math.radians(lat))
        y = EARTH_RADIUS_MILES * math.radians(lat - lat0)
        out.append((x, y))
    return out


def apportion_population(
    blocks: Iterable[BlockRecord], zone: ZonePolygon
) -> dict[str, float]:
    """Population living inside ``zone``, aggregated to tracts.

    Geometries must already share a planar projection. Each block
    contributes area(block ∩ zone) / area(block) times its population;
    zero-area blocks contribute nothing and are logged.
    """
    zone_shape = zone.shape
    totals: dict[str, float] = {}
    for block in blocks:
        shape = block.shape
        area = shape.area
        if area <= AREA_EPS:
            logger.warning("block %s has degenerate area; contributes zero", block.block_id)
            continue
        overlap = shape.intersection(zone_shape).area / area
        totals[block.tract_id] = totals.get(block.tract_id, 0.0) + overlap * block.population
    return totals


def classify_ring(area_overlap_share: float, centroid_border_distance: float) -> str:
    """Place a tract in a ring around the zone border.

    Inclusive lower bounds: share >= 0.75 is inside, share >= 0.25 is
    border; otherwise the centroid distance decides (<= 1 mile, <= 2
    miles, beyond).
    """
    if not (0.0 <= area_overlap_share <= 1.0):
        raise ValidationError(f"share {area_overlap_share} outside [0, 1]")
    if centroid_border_distance < 0:
        raise ValidationError("distance must be nonnegative")
    if area_overlap_share >= INSIDE_SHARE:
        return RING_INSIDE
    if area_overlap_share >= BORDER_SHARE:
        return RING_BORDER
    if centroid_border_distance <= 1.0:
        return RING_OUTSIDE_1MI
    if centroid_border_distance <= 2.0:
        return RING_OUTSIDE_2MI
    return RING_BEYOND


def boundary_distance(point: tuple[float, float], vertices: Sequence[tuple[float, float]]) -> float:
    """Planar distance from a point to a polygon's boundary ring.

    Zero when the point lies on the boundary; positive on either side.
    """
    poly = _validate_ring(vertices, "polygon")
    return float(poly.exterior.distance(Point(point)))


def border_distance_miles(
    centroid: tuple[float, float], zone: ZonePolygon
) -> tuple[float, bool]:
    """Great-circle-consistent miles from a tract centroid to a zone border.

    The zone is projected to a local plane centered on the centroid, where
    planar distance agrees with haversine to well under the fixture
    tolerance at city scale. Returns (distance, centroid_inside).
    """
    projected = project_lonlat(zone.vertices, origin=centroid)
    poly = Polygon(projected)
    distance = float(poly.exterior.distance(Point(0.0, 0.0)))
    inside = bool(poly.contains(Point(0.0, 0.0)))
    return distance, inside


def build_assignments(
    blocks: Iterable[BlockRecord],
    zones: Iterable[ZonePolygon],
    tract_centroids: Mapping[str, tuple[float, float]],
    tract_populations: Mapping[str, float] | None = None,
) -> list[ZoneAssignment]:
    """Full overlay: one assignment per (tract, zone) with any relevance.

    Blocks and zones are in geographic (lon, lat) coordinates; each zone's
    overlay is computed in a local equal-area plane about the zone
    centroid. Tracts overlapping both a designee and a finalist zone are
    emitted twice; resolution is a pipeline concern.

    Tracts with no block overlap still get an assignment when their
    centroid is within 2 miles of the border, so outer rings are covered.
    """
    blocks = list(blocks)
    assignments: list[ZoneAssignment] = []
    for zone in zones:
        origin = _centroid_of(zone.vertices)
        projected_zone = ZonePolygon(
            zone.zone_id, tuple(project_lonlat(zone.vertices, origin)), zone.role
        )
        projected_blocks = [
            BlockRecord(
                b.block_id, b.tract_id, b.population, tuple(project_lonlat(b.vertices, origin))
            )
            for b in blocks
        ]
        pops = apportion_population(projected_blocks, projected_zone)

        tract_area: dict[str, float] = {}
        tract_overlap: dict[str, float] = {}
        for block in projected_blocks:
            area = block.shape.area
            tract_area[block.tract_id] = tract_area.get(block.tract_id, 0.0) + area
            overlap = block.shape.intersection(projected_zone.shape).area
            tract_overlap[block.tract_id] = tract_overlap.get(block.tract_id, 0.0) + overlap

        for tract_id, centroid in tract_centroids.items():
            area = tract_area.get(tract_id, 0.0)
            share = min(1.0, tract_overlap.get(tract_id, 0.0) / area) if area > AREA_EPS else 0.0
            distance, inside = border_distance_miles(centroid, zone)
            if share <= 0.0 and not inside and distance > 2.0:
                continue
            pop_in_zone = pops.get(tract_id, 0.0)
            if tract_populations is not None:
                cap = tract_populations.get(tract_id)
                if cap is not None and pop_in_zone > cap + 1e-9:
                    raise ValidationError(
                        f"tract {tract_id}: pop_in_zone {pop_in_zone} exceeds population {cap}"
                    )
            assignments.append(
                ZoneAssignment(
                    tract_id=tract_id,
                    zone_id=zone.zone_id,
                    area_overlap_share=share,
                    pop_in_zone=pop_in_zone,
                    ring=classify_ring(share, distance),
                    centroid_border_distance=distance,
                    centroid_inside=inside,
                )
            )
    return assignments


def _centroid_of(vertices: Sequence[tuple[float, float]]) -> tuple[float, float]:
    c = Polygon(vertices).centroid
    return (c.x, c.y)


def _polygon_coords(geometry: dict, what: str) -> tuple[tuple[float, float], ...]:
    if geometry.get("type") != "Polygon":
        raise ValidationError(f"{what}: only Polygon geometries are supported")
    rings = geometry.get("coordinates") or []
    if not rings:
        raise ValidationError(f"{what}: empty geometry")
    return tuple((float(x), float(y)) for x, y in rings[0])


def load_zones_geojson(path: str | Path) -> list[ZonePolygon]:
    """Read zone polygons from GeoJSON (properties: zone_id, role, adoption_year)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    zones = []
    for feature in data.get("features", []):
        props = feature.get("properties", {})
        zone_id = props.get("zone_id")
        if zone_id is None:
            raise ValidationError(f"{path}: zone feature missing zone_id")
        zones.append(
            ZonePolygon(
                str(zone_id),
                _polygon_coords(feature.get("geometry", {}), f"zone {zone_id}"),
                role=props.get("role", "designee"),
            )
        )
    return zones


def load_blocks_geojson(path: str | Path) -> list[BlockRecord]:
    """Read census blocks from GeoJSON (properties: block_id, tract_id, population)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    blocks = []
    for feature in data.get("features", []):
        props = feature.get("properties", {})
        block_id = props.get("block_id")
        if block_id is None or props.get("tract_id") is None:
            raise ValidationError(f"{path}: block feature missing block_id/tract_id")
        blocks.append(
            BlockRecord(
                str(block_id),
                str(props["tract_id"]),
                float(props.get("population", 0.0)),
                _polygon_coords(feature.get("geometry", {}), f"block {block_id}"),
            )
        )
    return blocks


def write_assignments_csv(assignments: Iterable[ZoneAssignment], path: str | Path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "tract_id",
                "zone_id",
                "area_overlap_share",
                "pop_in_zone",
                "ring",
                "centroid_border_distance",
                "centroid_inside",
            ]
        )
        for a in sorted(assignments, key=lambda a: (a.tract_id, a.zone_id)):
            writer.writerow(
                [
                    a.tract_id,
                    a.zone_id,
                    repr(a.area_overlap_share),
                    repr(a.pop_in_zone),
                    a.ring,
                    repr(a.centroid_border_distance),
                    int(a.centroid_inside),
                ]
            )


def read_assignments_csv(path: str | Path) -> list[ZoneAssignment]:
    import csv

    assignments = []
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            assignments.append(
                ZoneAssignment(
                    tract_id=row["tract_id"],
                    zone_id=row["zone_id"],
                    area_overlap_share=float(row["area_overlap_share"]),
                    pop_in_zone=float(row["pop_in_zone"]),
                    ring=row["ring"],
                    centroid_border_distance=float(row["centroid_border_distance"]),
                    centroid_inside=bool(int(row.get("centroid_inside", "0"))),
                )
            )
    return assignments
