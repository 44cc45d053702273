"""terrafuse: fuse heterogeneous soil-environment sources into one table."""

from terrafuse.model import (
    Category,
    Cell,
    CellValue,
    Codebook,
    ColumnMap,
    FeatureDef,
    FusedTable,
    FusionSchema,
    GeoPoint,
    ImageRef,
    InvalidRule,
    MISSING,
    Modality,
    ModelError,
    Provenance,
    RasterFormatError,
    RasterGrid,
    Sample,
    Scalar,
    SourceKind,
    Text,
    Vector,
    location_key,
    validate_cell,
)

__all__ = [
    "Category",
    "Cell",
    "CellValue",
    "Codebook",
    "ColumnMap",
    "FeatureDef",
    "FusedTable",
    "FusionSchema",
    "GeoPoint",
    "ImageRef",
    "InvalidRule",
    "MISSING",
    "Modality",
    "ModelError",
    "Provenance",
    "RasterFormatError",
    "RasterGrid",
    "Sample",
    "Scalar",
    "SourceKind",
    "Text",
    "Vector",
    "location_key",
    "validate_cell",
]

__version__ = "0.1.0"
