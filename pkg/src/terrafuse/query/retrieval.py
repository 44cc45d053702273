"""Dual-mode retrieval: nearby samples, or feature values across an area.

Distances use the same scalar haversine as the fusion engine so the
nearest-k results agree bit-for-bit with a brute-force scan; the scan
IS the implementation, which at snapshot scale (tens of thousands of
samples) stays comfortably inside the latency budget.
"""

from __future__ import annotations

from dataclasses import dataclass

from terrafuse.fuse import haversine_m
from terrafuse.model import (
    Category,
    Cell,
    FusedTable,
    GeoPoint,
    ImageRef,
    Scalar,
    Text,
    Vector,
)
from terrafuse.query.regions import AdminRegion


class QueryError(ValueError):
    pass


class TooManyFeatures(QueryError):
    pass


FEATURE_CAP = 5


@dataclass(frozen=True)
class BBox:
    west: float
    south: float
    east: float
    north: float

    def __post_init__(self) -> None:
        if self.west > self.east or self.south > self.north:
            raise QueryError("bbox must satisfy west <= east and south <= north")

    def contains(self, p: GeoPoint) -> bool:
        return self.west <= p.lon <= self.east and self.south <= p.lat <= self.north


def _cell_value_doc(cell: Cell):
    v = cell.value
    if isinstance(v, Scalar):
        return v.value
    if isinstance(v, Vector):
        return list(v.values)
    if isinstance(v, Category):
        return v.label
    if isinstance(v, Text):
        return v.text
    if isinstance(v, ImageRef):
        return v.path
    return None


def _check_features(table: FusedTable, feature_ids: list[str]) -> None:
    for fid in feature_ids:
        if fid not in table.feature_map:
            raise QueryError(f"unknown feature {fid}")


def query_samples(
    table: FusedTable, center: GeoPoint, k: int, feature_ids: list[str]
) -> list[dict]:
    """k nearest samples with the requested cells; Missing is explicit."""
    if k < 1:
        raise QueryError("k must be >= 1")
    _check_features(table, feature_ids)

    ranked = sorted(
        ((haversine_m(center, s.location), s.sample_id) for s in table.samples),
    )[:k]

    results = []
    for distance, sid in ranked:
        s = table.sample_map[sid]
        cells: dict = {}
        for fid in feature_ids:
            cell = s.cells.get(fid)
            if cell is None:
                cells[fid] = {"missing": True}
            else:
                cells[fid] = {
                    "value": _cell_value_doc(cell),
                    "source_dataset_id": cell.provenance.source_dataset_id,
                    "source_kind": cell.provenance.source_kind.value,
                    "alignment_distance_m": cell.provenance.alignment_distance_m,
                }
        results.append(
            {
                "sample_id": sid,
                "lon": s.location.lon,
                "lat": s.location.lat,
                "distance_m": distance,
                "features": cells,
            }
        )
    return results


def query_feature_distribution(
    table: FusedTable,
    area: BBox | AdminRegion,
    feature_ids: list[str],
    cap: int = FEATURE_CAP,
) -> dict[str, list[dict]]:
    """Observed (location, value) pairs per feature across an area.

    The per-request feature cap keeps feature-centric responses small
    by construction; violating it is the caller's error.
    """
    if len(feature_ids) > cap:
        raise TooManyFeatures(f"{len(feature_ids)} features exceed the cap of {cap}")
    _check_features(table, feature_ids)

    out: dict[str, list[dict]] = {fid: [] for fid in feature_ids}
    for s in sorted(table.samples, key=lambda s: s.sample_id):
        if not area.contains(s.location):
            continue
        for fid in feature_ids:
            cell = s.cells.get(fid)
            if cell is None:
                continue
            out[fid].append(
                {
                    "sample_id": s.sample_id,
                    "lon": s.location.lon,
                    "lat": s.location.lat,
                    "value": _cell_value_doc(cell),
                }
            )
    return out
