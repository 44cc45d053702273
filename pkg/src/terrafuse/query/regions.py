"""Administrative regions: simple polygons with containment queries.

Containment uses even-odd ray casting with an explicit on-boundary
check first, so edge and vertex points count as inside on both sides
of a shared border.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from terrafuse.model import GeoPoint


class RegionError(ValueError):
    pass


Vertex = tuple[float, float]  # (lon, lat)


def _on_segment(p: GeoPoint, a: Vertex, b: Vertex) -> bool:
    (x1, y1), (x2, y2) = a, b
    cross = (x2 - x1) * (p.lat - y1) - (y2 - y1) * (p.lon - x1)
    scale = max(abs(x2 - x1), abs(y2 - y1), 1.0)
    if abs(cross) > 1e-12 * scale:
        return False
    return (
        min(x1, x2) - 1e-12 <= p.lon <= max(x1, x2) + 1e-12
        and min(y1, y2) - 1e-12 <= p.lat <= max(y1, y2) + 1e-12
    )


def point_in_polygon(p: GeoPoint, vertices: Sequence[Vertex]) -> bool:
    """Even-odd containment, boundary-inclusive."""
    n = len(vertices)
    for i in range(n):
        if _on_segment(p, vertices[i], vertices[(i + 1) % n]):
            return True
    inside = False
    j = n - 1
    for i in range(n):
        xi, yi = vertices[i]
        xj, yj = vertices[j]
        if (yi > p.lat) != (yj > p.lat):
            x_cross = xj + (p.lat - yj) * (xi - xj) / (yi - yj)
            if p.lon < x_cross:
                inside = not inside
        j = i
    return inside


def _segments_cross(a: Vertex, b: Vertex, c: Vertex, d: Vertex) -> bool:
    def orient(p: Vertex, q: Vertex, r: Vertex) -> float:
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return (o1 * o2 < 0) and (o3 * o4 < 0)


@dataclass(frozen=True)
class AdminRegion:
    id: str
    level: int
    parent_id: str | None
    boundary: tuple[Vertex, ...]

    def __post_init__(self) -> None:
        if self.level < 0:
            raise RegionError(f"{self.id}: level must be >= 0")
        verts = self.boundary
        if len(verts) >= 2 and verts[0] == verts[-1]:
            object.__setattr__(self, "boundary", verts[:-1])
            verts = self.boundary
        if len(set(verts)) < 3:
            raise RegionError(f"{self.id}: polygon needs at least 3 distinct vertices")
        n = len(verts)
        for i in range(n):
            for k in range(i + 1, n):
                if abs(i - k) in (0, 1) or (i == 0 and k == n - 1):
                    continue  # adjacent edges share a vertex, not a crossing
                a, b = verts[i], verts[(i + 1) % n]
                c, d = verts[k], verts[(k + 1) % n]
                if _segments_cross(a, b, c, d):
                    raise RegionError(f"{self.id}: polygon is self-intersecting")

    def contains(self, p: GeoPoint) -> bool:
        return point_in_polygon(p, self.boundary)


def validate_region_set(regions: Iterable[AdminRegion]) -> dict[str, AdminRegion]:
    by_id = {}
    for r in regions:
        if r.id in by_id:
            raise RegionError(f"duplicate region id {r.id}")
        by_id[r.id] = r
    for r in by_id.values():
        if r.parent_id is not None:
            parent = by_id.get(r.parent_id)
            if parent is None:
                raise RegionError(f"{r.id}: unknown parent {r.parent_id}")
            if parent.level != r.level - 1:
                raise RegionError(f"{r.id}: parent level {parent.level} != {r.level - 1}")
    return by_id


def load_regions(text: str) -> dict[str, AdminRegion]:
    """Parse the regions JSON document: a list of region objects."""
    doc = json.loads(text)
    regions = [
        AdminRegion(
            id=obj["id"],
            level=int(obj["level"]),
            parent_id=obj.get("parent_id"),
            boundary=tuple((float(lon), float(lat)) for lon, lat in obj["boundary"]),
        )
        for obj in doc
    ]
    return validate_region_set(regions)


def admin_hierarchy(p: GeoPoint, regions: Iterable[AdminRegion]) -> list[AdminRegion]:
    """All regions containing p, coarse to fine. May be empty."""
    chain = [r for r in regions if r.contains(p)]
    chain.sort(key=lambda r: (r.level, r.id))
    return chain
