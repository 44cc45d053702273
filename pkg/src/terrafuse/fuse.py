"""Execute fusion schemas against standardized sources.

Sample-structured sources create samples; map-structured sources add
cells to existing samples by nearest-cell raster lookup, recording the
sample-to-cell-center distance as alignment provenance. Feature
ownership is exclusive per source dataset; collisions are errors, not
merges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from terrafuse.model import (
    MISSING,
    Category,
    Cell,
    FeatureDef,
    FusedTable,
    FusionSchema,
    GeoPoint,
    Modality,
    Provenance,
    RasterGrid,
    Sample,
    Scalar,
    SourceKind,
    Text,
    Vector,
    group_by_location,
)
from terrafuse.standardize import StandardizedRecord, convert_unit, detect_invalid_numeric

EARTH_RADIUS_M = 6_371_000.0


class FuseError(ValueError):
    """Fusion-level failure (misconfigured schema, unknown target)."""


class FeatureCollisionError(FuseError):
    """Two schemas attempted to write the same feature."""


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius 6,371 km."""
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


# ---------------------------------------------------------------------------
# dataset screening
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScreeningMeta:
    kind: SourceKind
    has_georef: bool
    resolution_m: float | None = None
    is_long_term_projection: bool = False


@dataclass(frozen=True)
class ScreeningDecision:
    keep: bool
    reason: str | None = None


def screen_dataset(meta: ScreeningMeta) -> ScreeningDecision:
    """Apply the three exclusion rules; first failing rule names the reason."""
    if meta.resolution_m is not None and meta.resolution_m > 5000:
        return ScreeningDecision(False, "coarse resolution")
    if meta.is_long_term_projection:
        return ScreeningDecision(False, "long-term projection")
    if meta.kind is SourceKind.SAMPLE_STRUCTURED and not meta.has_georef:
        return ScreeningDecision(False, "no georeference")
    return ScreeningDecision(True)


# ---------------------------------------------------------------------------
# raster sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RasterHit:
    value: float
    distance_m: float
    row: int
    col: int


def locate_cell(grid: RasterGrid, p: GeoPoint) -> tuple[int, int] | None:
    """Row/col of the cell whose center is nearest p; None outside extent.

    Planar index arithmetic picks the containing cell; a 3x3
    neighborhood scan by great-circle distance corrects the row choice
    near row boundaries at high latitude, where longitude offsets
    shrink and a poleward center can be metrically nearer. Ties break
    toward the smaller (row, col).
    """
    if not grid.contains(p):
        return None
    col0 = int((p.lon - grid.xllcorner) / grid.cellsize)
    col0 = min(max(col0, 0), grid.ncols - 1)
    row_from_south = int((p.lat - grid.yllcorner) / grid.cellsize)
    row_from_south = min(max(row_from_south, 0), grid.nrows - 1)
    row0 = grid.nrows - 1 - row_from_south

    best: tuple[float, int, int] | None = None
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r, c = row0 + dr, col0 + dc
            if 0 <= r < grid.nrows and 0 <= c < grid.ncols:
                d = haversine_m(p, grid.cell_center(r, c))
                cand = (d, r, c)
                if best is None or cand < best:
                    best = cand
    assert best is not None
    return best[1], best[2]


def sample_raster_at(grid: RasterGrid, p: GeoPoint) -> RasterHit | None:
    """Nearest-cell value and alignment distance; None if nodata or outside."""
    loc = locate_cell(grid, p)
    if loc is None:
        return None
    row, col = loc
    if grid.is_nodata(row, col):
        return None
    return RasterHit(
        value=grid.values[row][col],
        distance_m=haversine_m(p, grid.cell_center(row, col)),
        row=row,
        col=col,
    )


# ---------------------------------------------------------------------------
# schema execution
# ---------------------------------------------------------------------------


@dataclass
class SchemaReport:
    dataset_id: str
    kind: str
    samples_created: int = 0
    cells_written: int = 0
    cells_missing: int = 0
    out_of_extent: int = 0
    records_skipped_no_georef: int = 0
    warnings: list[str] = field(default_factory=list)


def _claims_from_table(table: FusedTable) -> dict[str, str]:
    claims: dict[str, str] = {}
    for s in table.samples:
        for fid, cell in s.cells.items():
            claims.setdefault(fid, cell.provenance.source_dataset_id)
    return claims


def _check_claims(schema: FusionSchema, claims: dict[str, str]) -> None:
    for fid in schema.target_feature_ids:
        owner = claims.get(fid)
        if owner is not None and owner != schema.dataset_id:
            raise FeatureCollisionError(
                f"feature {fid} already written by {owner}, claimed again by {schema.dataset_id}"
            )
        claims[fid] = schema.dataset_id


def _record_cells(
    schema: FusionSchema,
    record: StandardizedRecord,
    features: Mapping[str, FeatureDef],
    report: SchemaReport,
) -> dict[str, Cell]:
    prov = Provenance(schema.dataset_id, SourceKind.SAMPLE_STRUCTURED, 0.0)
    maps_by_target: dict[str, list] = {}
    for m in schema.column_maps:
        maps_by_target.setdefault(m.target_feature_id, []).append(m)

    cells: dict[str, Cell] = {}
    for fid, maps in maps_by_target.items():
        feat = features.get(fid)
        if feat is None:
            raise FuseError(f"{schema.dataset_id}: target feature {fid} not registered")
        if maps[0].component is not None:
            parts = sorted(maps, key=lambda m: m.component)
            if [m.component for m in parts] != list(range(1, len(parts) + 1)):
                raise FuseError(f"{schema.dataset_id}: {fid} components must be 1..d contiguous")
            raw_parts = [record.values.get(m.source_column, MISSING) for m in parts]
            if any(v is MISSING for v in raw_parts):
                # a vector is all-or-nothing; partial components stay missing
                report.cells_missing += 1
                continue
            cells[fid] = Cell(Vector(tuple(float(v) for v in raw_parts)), prov)
            report.cells_written += 1
        else:
            v = record.values.get(maps[0].source_column, MISSING)
            if v is MISSING:
                report.cells_missing += 1
                continue
            if feat.modality is Modality.SCALAR_NUM:
                cells[fid] = Cell(Scalar(float(v)), prov)
            elif feat.modality is Modality.CATEGORICAL:
                cells[fid] = Cell(Category(str(v)), prov)
            elif feat.modality is Modality.TEXT:
                cells[fid] = Cell(Text(str(v)), prov)
            else:
                raise FuseError(
                    f"{schema.dataset_id}: single-column map cannot fill {feat.modality.value} feature {fid}"
                )
            report.cells_written += 1
    return cells


def execute_schema(
    schema: FusionSchema,
    source: Sequence[StandardizedRecord] | RasterGrid,
    table: FusedTable,
    claims: dict[str, str] | None = None,
) -> tuple[FusedTable, SchemaReport]:
    """Fold one source into the table, returning the new table and report.

    The input table is never mutated. ``claims`` tracks feature
    ownership across schemas; when omitted it is reconstructed from the
    table's cell provenance.
    """
    if claims is None:
        claims = _claims_from_table(table)
    _check_claims(schema, claims)
    report = SchemaReport(dataset_id=schema.dataset_id, kind=schema.kind.value)

    if schema.kind is SourceKind.SAMPLE_STRUCTURED:
        if isinstance(source, RasterGrid):
            raise FuseError(f"{schema.dataset_id}: sample-structured schema given a raster")
        samples = list(table.samples)
        existing = {s.sample_id: i for i, s in enumerate(samples)}
        for ordinal, record in enumerate(source, start=1):
            if record.georef is None:
                report.records_skipped_no_georef += 1
                continue
            sid = f"{schema.dataset_id}:{ordinal:04d}"
            cells = _record_cells(schema, record, table.feature_map, report)
            if sid in existing:
                prior = samples[existing[sid]]
                overlap = set(prior.cells) & set(cells)
                if overlap:
                    raise FuseError(f"{sid}: duplicate cells for {sorted(overlap)}")
                samples[existing[sid]] = replace(prior, cells={**prior.cells, **cells})
            else:
                samples.append(
                    Sample(
                        sample_id=sid,
                        location=record.georef,
                        source_survey=schema.dataset_id,
                        cells=cells,
                    )
                )
                report.samples_created += 1
        return FusedTable(table.features, samples), report

    # map-structured: exactly one numeric band sampled at every existing sample
    if not isinstance(source, RasterGrid):
        raise FuseError(f"{schema.dataset_id}: map-structured schema needs a raster source")
    if len(schema.column_maps) != 1:
        raise FuseError(f"{schema.dataset_id}: raster schemas take exactly one column map")
    cmap = schema.column_maps[0]
    if cmap.codebook_ref is not None or cmap.text or cmap.component is not None:
        raise FuseError(f"{schema.dataset_id}: raster values are numeric only")
    fid = cmap.target_feature_id
    feat = table.feature_map.get(fid)
    if feat is None:
        raise FuseError(f"{schema.dataset_id}: target feature {fid} not registered")
    if feat.modality is not Modality.SCALAR_NUM:
        raise FuseError(f"{schema.dataset_id}: raster target {fid} must be scalar")

    samples = []
    for s in table.samples:
        hit = sample_raster_at(source, s.location)
        if hit is None:
            if locate_cell(source, s.location) is None:
                report.out_of_extent += 1
            else:
                report.cells_missing += 1
            samples.append(s)
            continue
        value = detect_invalid_numeric(hit.value, cmap.invalid_rules)
        if value is MISSING:
            report.cells_missing += 1
            samples.append(s)
            continue
        cell = Cell(
            Scalar(convert_unit(value, cmap.scale, cmap.offset)),
            Provenance(schema.dataset_id, SourceKind.MAP_STRUCTURED, hit.distance_m),
        )
        samples.append(replace(s, cells={**s.cells, fid: cell}))
        report.cells_written += 1
    return FusedTable(table.features, samples), report


def link_asset(
    table: FusedTable,
    sample_id: str,
    feature_id: str,
    ref: str,
    source_dataset_id: str = "assets",
) -> tuple[FusedTable, list[str]]:
    """Attach an asset reference to one cell; relinks overwrite with a warning."""
    from terrafuse.model import ImageRef

    if sample_id not in table.sample_map:
        raise FuseError(f"unknown sample {sample_id}")
    feat = table.feature_map.get(feature_id)
    if feat is None:
        raise FuseError(f"unknown feature {feature_id}")
    if not (feat.modality is Modality.IMAGE_REF or (feat.modality is Modality.VECTOR_NUM and feat.asset)):
        raise FuseError(f"feature {feature_id} does not hold asset references")

    warnings: list[str] = []
    samples = []
    for s in table.samples:
        if s.sample_id != sample_id:
            samples.append(s)
            continue
        if feature_id in s.cells:
            warnings.append(f"{sample_id}/{feature_id}: existing link overwritten")
        cell = Cell(ImageRef(ref), Provenance(source_dataset_id, SourceKind.SAMPLE_STRUCTURED, 0.0))
        samples.append(replace(s, cells={**s.cells, feature_id: cell}))
    return FusedTable(table.features, samples), warnings


def build_location_index(table: FusedTable) -> dict[str, list[str]]:
    return group_by_location(table.samples)


# ---------------------------------------------------------------------------
# multi-source driver
# ---------------------------------------------------------------------------


@dataclass
class FusionReport:
    schema_reports: list[SchemaReport] = field(default_factory=list)
    excluded: list[tuple[str, str]] = field(default_factory=list)  # (dataset_id, reason)


def fuse_sources(
    features: Iterable[FeatureDef],
    schemas: Sequence[FusionSchema],
    sources: Mapping[str, Sequence[StandardizedRecord] | RasterGrid],
    metas: Mapping[str, ScreeningMeta] | None = None,
) -> tuple[FusedTable, FusionReport]:
    """Screen and execute every schema: surveys first (they create the
    samples), then rasters in dataset-id order (order cannot matter:
    their feature sets are disjoint)."""
    metas = metas or {}
    report = FusionReport()
    table = FusedTable(features, [])
    claims: dict[str, str] = {}

    ordered = sorted(schemas, key=lambda s: (s.kind is not SourceKind.SAMPLE_STRUCTURED, s.dataset_id))
    for schema in ordered:
        meta = metas.get(schema.dataset_id)
        if meta is None:
            meta = ScreeningMeta(
                kind=schema.kind,
                has_georef=schema.georef_columns is not None
                or schema.kind is SourceKind.MAP_STRUCTURED,
                resolution_m=schema.resolution_m,
            )
        decision = screen_dataset(meta)
        if not decision.keep:
            assert decision.reason is not None
            report.excluded.append((schema.dataset_id, decision.reason))
            continue
        if schema.dataset_id not in sources:
            raise FuseError(f"no source data for schema {schema.dataset_id}")
        table, schema_report = execute_schema(schema, sources[schema.dataset_id], table, claims)
        report.schema_reports.append(schema_report)
    return table, report
