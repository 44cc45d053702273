"""Core domain types for the fused sample-feature table.

Everything here is immutable after construction and safe for concurrent
reads. Construction validates eagerly: a ``FusedTable`` that violates a
cell invariant never comes into existence.

Conventions baked into the types:

* Coordinates are WGS84 lon/lat degrees; no other CRS is represented.
* Numbers are Python floats (double precision). NaN is never a legal
  stored value; absence is expressed only through ``MISSING``.
* Two samples share a location iff their coordinates agree after
  rounding to 5 decimal places (roughly 1 m), see :func:`location_key`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Union


class ModelError(ValueError):
    """Raised when a domain invariant is violated at construction."""


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 longitude/latitude pair in degrees."""

    lon: float
    lat: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ModelError(f"non-finite coordinates ({self.lon}, {self.lat})")
        if not -180.0 <= self.lon <= 180.0:
            raise ModelError(f"longitude {self.lon} outside [-180, 180]")
        if not -90.0 <= self.lat <= 90.0:
            raise ModelError(f"latitude {self.lat} outside [-90, 90]")


def _round5(x: float) -> str:
    s = f"{x:.5f}"
    return "0.00000" if s == "-0.00000" else s


def location_key(p: GeoPoint) -> str:
    """Canonical key defining location identity.

    Points whose coordinates agree after rounding to 5 decimal places
    (about 1 m, below any source resolution) share a key. Signed zero is
    normalized so -0.0000004 and +0.0000004 cannot split a location.
    """
    return f"{_round5(p.lon)},{_round5(p.lat)}"


# ---------------------------------------------------------------------------
# features and cells
# ---------------------------------------------------------------------------


class Modality(str, Enum):
    """What kind of value a feature's cells hold."""

    SCALAR_NUM = "scalar_num"
    VECTOR_NUM = "vector_num"
    CATEGORICAL = "categorical"
    TEXT = "text"
    IMAGE_REF = "image_ref"


@dataclass(frozen=True)
class FeatureDef:
    """Definition of one column of the fused table.

    ``vector_dim`` is present iff the modality is vector-valued;
    ``vocabulary`` (an ordered, duplicate-free label list) is present iff
    categorical. ``asset`` marks vector features whose payloads live in
    linked files rather than inline cells.
    """

    id: str
    name: str
    unit: str = ""
    theme: str = ""
    modality: Modality = Modality.SCALAR_NUM
    vector_dim: int | None = None
    vocabulary: tuple[str, ...] | None = None
    annotation: str = ""
    asset: bool = False

    def __post_init__(self) -> None:
        if not self.id:
            raise ModelError("feature id must be non-empty")
        if (self.modality is Modality.VECTOR_NUM) != (self.vector_dim is not None):
            raise ModelError(f"{self.id}: vector_dim present iff modality is vector")
        if self.vector_dim is not None and self.vector_dim < 2:
            raise ModelError(f"{self.id}: vector_dim must be >= 2")
        if (self.modality is Modality.CATEGORICAL) != (self.vocabulary is not None):
            raise ModelError(f"{self.id}: vocabulary present iff modality is categorical")
        if self.vocabulary is not None:
            if not self.vocabulary:
                raise ModelError(f"{self.id}: vocabulary must be non-empty")
            if len(set(self.vocabulary)) != len(self.vocabulary):
                raise ModelError(f"{self.id}: vocabulary contains duplicates")
        if self.asset and self.modality not in (Modality.VECTOR_NUM, Modality.IMAGE_REF):
            raise ModelError(f"{self.id}: only vector or image features can be assets")


class _Missing:
    """Singleton marker for an absent value. Never serialized as NaN."""

    _instance: "_Missing | None" = None

    def __new__(cls) -> "_Missing":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MISSING"


MISSING = _Missing()


@dataclass(frozen=True)
class Scalar:
    value: float


@dataclass(frozen=True)
class Vector:
    values: tuple[float, ...]


@dataclass(frozen=True)
class Category:
    label: str


@dataclass(frozen=True)
class Text:
    text: str


@dataclass(frozen=True)
class ImageRef:
    """Reference to an external asset file (site photo or vector payload)."""

    path: str


CellValue = Union[Scalar, Vector, Category, Text, ImageRef, _Missing]


def validate_cell(feature: FeatureDef, value: CellValue) -> list[str]:
    """Check a cell value against its feature definition.

    Returns a list of violation descriptions; an empty list means the
    cell is valid. ``MISSING`` is valid for every feature.
    """
    violations: list[str] = []
    if value is MISSING:
        return violations

    if isinstance(value, Scalar):
        if feature.modality is not Modality.SCALAR_NUM:
            violations.append(f"scalar value in {feature.modality.value} feature")
        elif not math.isfinite(value.value):
            violations.append("scalar value is not finite")
    elif isinstance(value, Vector):
        if feature.modality is not Modality.VECTOR_NUM:
            violations.append(f"vector value in {feature.modality.value} feature")
        else:
            if len(value.values) != feature.vector_dim:
                violations.append(
                    f"length mismatch: got {len(value.values)}, expected {feature.vector_dim}"
                )
            if any(not math.isfinite(v) for v in value.values):
                violations.append("vector contains a non-finite entry")
    elif isinstance(value, Category):
        if feature.modality is not Modality.CATEGORICAL:
            violations.append(f"category value in {feature.modality.value} feature")
        elif value.label not in (feature.vocabulary or ()):
            violations.append(f"label not in vocabulary: {value.label!r}")
    elif isinstance(value, Text):
        if feature.modality is not Modality.TEXT:
            violations.append(f"text value in {feature.modality.value} feature")
    elif isinstance(value, ImageRef):
        ref_ok = feature.modality is Modality.IMAGE_REF or (
            feature.modality is Modality.VECTOR_NUM and feature.asset
        )
        if not ref_ok:
            violations.append(f"asset reference in {feature.modality.value} feature")
    else:
        violations.append(f"unknown cell value type {type(value).__name__}")
    return violations


# ---------------------------------------------------------------------------
# provenance and samples
# ---------------------------------------------------------------------------


class SourceKind(str, Enum):
    SAMPLE_STRUCTURED = "sample_structured"
    MAP_STRUCTURED = "map_structured"


@dataclass(frozen=True)
class Provenance:
    """Where a cell value came from and how far it was aligned.

    ``alignment_distance_m`` is 0 for sample-structured sources (the
    value was measured at the sample location) and the sample-to-cell
    distance for map-structured sources.
    """

    source_dataset_id: str
    source_kind: SourceKind
    alignment_distance_m: float = 0.0

    def __post_init__(self) -> None:
        d = self.alignment_distance_m
        if not math.isfinite(d) or d < 0:
            raise ModelError(f"alignment distance must be finite and >= 0, got {d}")
        if self.source_kind is SourceKind.SAMPLE_STRUCTURED and d != 0.0:
            raise ModelError("sample-structured provenance must have distance 0")


@dataclass(frozen=True)
class Cell:
    value: CellValue
    provenance: Provenance


@dataclass(frozen=True)
class Sample:
    """One soil observation: a georeferenced record with feature cells.

    Multiple samples may share a location (repeated visits, depth
    profiles); they stay distinct samples and are grouped only through
    the table's location index.
    """

    sample_id: str
    location: GeoPoint
    source_survey: str
    cells: Mapping[str, Cell] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.sample_id:
            raise ModelError("sample_id must be non-empty")


def group_by_location(samples: Iterable[Sample]) -> dict[str, list[str]]:
    """Group sample ids by location key, each group sorted by sample_id."""
    index: dict[str, list[str]] = {}
    for s in samples:
        index.setdefault(location_key(s.location), []).append(s.sample_id)
    for ids in index.values():
        ids.sort()
    return {key: index[key] for key in sorted(index)}


# ---------------------------------------------------------------------------
# codebooks, rasters, schemas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Codebook:
    """Raw categorical codes mapped to standardized labels.

    ``missing_codes`` are codes that declare absence (for example
    ``"-999"``); they are disjoint from the mapped codes.
    """

    mapping: Mapping[str, str]
    missing_codes: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        overlap = set(self.mapping) & set(self.missing_codes)
        if overlap:
            raise ModelError(f"codes both mapped and missing: {sorted(overlap)}")
        for code, label in self.mapping.items():
            if not label:
                raise ModelError(f"empty label for code {code!r}")


class RasterFormatError(ValueError):
    """Raised for malformed portable raster documents.

    ``kind`` is one of ``malformed-header``, ``shape-mismatch``,
    ``non-numeric-cell``.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class RasterGrid:
    """A regular lon/lat grid with a nodata mask, row 0 northernmost."""

    def __init__(
        self,
        ncols: int,
        nrows: int,
        xllcorner: float,
        yllcorner: float,
        cellsize: float,
        nodata_value: float,
        values: list[list[float]],
    ):
        if ncols <= 0 or nrows <= 0:
            raise RasterFormatError("malformed-header", f"ncols/nrows must be positive ({ncols}x{nrows})")
        if not (math.isfinite(cellsize) and cellsize > 0):
            raise RasterFormatError("malformed-header", f"cellsize must be > 0, got {cellsize}")
        if not (math.isfinite(xllcorner) and math.isfinite(yllcorner)):
            raise RasterFormatError("malformed-header", "corner coordinates must be finite")
        if not math.isfinite(nodata_value):
            raise RasterFormatError("malformed-header", f"nodata_value must be finite, got {nodata_value}")
        if len(values) != nrows:
            raise RasterFormatError("shape-mismatch", f"expected {nrows} rows, got {len(values)}")
        for i, row in enumerate(values):
            if len(row) != ncols:
                raise RasterFormatError(
                    "shape-mismatch", f"row {i} has {len(row)} values, expected {ncols}"
                )
            for v in row:
                if not math.isfinite(v):
                    raise RasterFormatError("non-numeric-cell", f"non-finite value in row {i}")
        self.ncols = ncols
        self.nrows = nrows
        self.xllcorner = xllcorner
        self.yllcorner = yllcorner
        self.cellsize = cellsize
        self.nodata_value = nodata_value
        self.values = values

    def is_nodata(self, row: int, col: int) -> bool:
        return self.values[row][col] == self.nodata_value

    def cell_center(self, row: int, col: int) -> GeoPoint:
        """Center of the cell at (row, col); row 0 is the northernmost row."""
        lon = self.xllcorner + (col + 0.5) * self.cellsize
        lat = self.yllcorner + (self.nrows - row - 0.5) * self.cellsize
        return GeoPoint(lon, lat)

    def contains(self, p: GeoPoint) -> bool:
        """True if the point lies within the grid extent (edges inclusive)."""
        return (
            self.xllcorner <= p.lon <= self.xllcorner + self.ncols * self.cellsize
            and self.yllcorner <= p.lat <= self.yllcorner + self.nrows * self.cellsize
        )


# ---------------------------------------------------------------------------
# fusion schemas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvalidRule:
    """Marks a parsed number as an invalid placeholder.

    ``equals_sentinel`` compares exactly on the parsed double; ``below``
    and ``above`` are strict threshold checks.
    """

    kind: str  # equals_sentinel | below | above
    threshold: float

    def __post_init__(self) -> None:
        if self.kind not in ("equals_sentinel", "below", "above"):
            raise ModelError(f"unknown invalid rule kind {self.kind!r}")
        if not math.isfinite(self.threshold):
            raise ModelError("invalid rule threshold must be finite")

    def fires(self, value: float) -> bool:
        if self.kind == "equals_sentinel":
            return value == self.threshold
        if self.kind == "below":
            return value < self.threshold
        return value > self.threshold


@dataclass(frozen=True)
class ColumnMap:
    """Maps one source column to a target feature (or vector component).

    ``component`` is a 1-based index into the target vector for
    vector-valued features fed by several source columns.
    """

    source_column: str
    target_feature_id: str
    scale: float = 1.0
    offset: float = 0.0
    codebook_ref: str | None = None
    invalid_rules: tuple[InvalidRule, ...] = ()
    component: int | None = None
    text: bool = False

    def __post_init__(self) -> None:
        if self.scale == 0 or not math.isfinite(self.scale) or not math.isfinite(self.offset):
            raise ModelError(f"{self.source_column}: scale must be finite and nonzero")
        if self.component is not None and self.component < 1:
            raise ModelError(f"{self.source_column}: component index is 1-based")
        if self.text and (
            self.codebook_ref is not None
            or self.invalid_rules
            or self.scale != 1.0
            or self.offset != 0.0
            or self.component is not None
        ):
            raise ModelError(f"{self.source_column}: text columns take no transforms")


@dataclass(frozen=True)
class FusionSchema:
    """Declarative mapping from one standardized source into the table."""

    dataset_id: str
    kind: SourceKind
    column_maps: tuple[ColumnMap, ...]
    resolution_m: float | None = None
    georef_columns: tuple[str, str] | None = None  # (lon_col, lat_col)

    def __post_init__(self) -> None:
        if not self.dataset_id:
            raise ModelError("schema dataset_id must be non-empty")
        if self.kind is SourceKind.SAMPLE_STRUCTURED and self.georef_columns is None:
            raise ModelError(f"{self.dataset_id}: sample-structured schemas need georef columns")
        slots = [(m.target_feature_id, m.component) for m in self.column_maps]
        if len(set(slots)) != len(slots):
            raise ModelError(f"{self.dataset_id}: duplicate target feature slots")
        by_target: dict[str, set[int | None]] = {}
        for fid, comp in slots:
            by_target.setdefault(fid, set()).add(comp)
        for fid, comps in by_target.items():
            if None in comps and len(comps) > 1:
                raise ModelError(f"{self.dataset_id}: {fid} mapped both whole and per-component")

    @property
    def target_feature_ids(self) -> list[str]:
        seen: list[str] = []
        for m in self.column_maps:
            if m.target_feature_id not in seen:
                seen.append(m.target_feature_id)
        return seen


# ---------------------------------------------------------------------------
# the fused table
# ---------------------------------------------------------------------------


class FusedTable:
    """The unified sample-feature table.

    Construction validates every cell against its feature definition and
    builds the location index; invalid tables are rejected outright.
    Instances are treated as immutable; mutation happens by building a
    new table (see the fuse module).
    """

    def __init__(self, features: Iterable[FeatureDef], samples: Iterable[Sample]):
        self.features: list[FeatureDef] = list(features)
        self.samples: list[Sample] = list(samples)

        ids = [f.id for f in self.features]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate feature ids in table")
        self.feature_map: dict[str, FeatureDef] = {f.id: f for f in self.features}

        seen_samples: set[str] = set()
        for s in self.samples:
            if s.sample_id in seen_samples:
                raise ModelError(f"duplicate sample id {s.sample_id}")
            seen_samples.add(s.sample_id)
            for fid, cell in s.cells.items():
                feat = self.feature_map.get(fid)
                if feat is None:
                    raise ModelError(f"{s.sample_id}: cell for unknown feature {fid}")
                violations = validate_cell(feat, cell.value)
                if violations:
                    raise ModelError(f"{s.sample_id}/{fid}: " + "; ".join(violations))

        self.location_index: dict[str, list[str]] = group_by_location(self.samples)
        self.sample_map: dict[str, Sample] = {s.sample_id: s for s in self.samples}

    def __len__(self) -> int:
        return len(self.samples)
