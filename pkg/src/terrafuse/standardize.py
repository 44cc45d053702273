"""Turn raw source files into standardized records and portable rasters.

Standardization is where raw strings become typed values: codebooks are
resolved, invalid placeholders detected, units converted, and rasters
parsed into validated grids. Cell-level problems never abort a run;
they degrade to Missing and land in the issue report, which is the
review artifact. Only header/schema mismatches are fatal.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping

from terrafuse.model import (
    MISSING,
    Codebook,
    ColumnMap,
    FusionSchema,
    GeoPoint,
    InvalidRule,
    ModelError,
    RasterFormatError,
    RasterGrid,
    SourceKind,
    _Missing,
)


class StandardizeError(ValueError):
    """Fatal standardization failure: header/schema mismatch."""


class UnknownCodeError(KeyError):
    """A raw categorical code absent from both the codebook mapping and
    its declared missing codes. Signals an incomplete codebook."""

    def __init__(self, code: str):
        super().__init__(code)
        self.code = code


@dataclass(frozen=True)
class RawTable:
    """An untyped source table: header plus string-valued rows."""

    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if len(set(self.header)) != len(self.header):
            raise StandardizeError("duplicate column names in header")
        for i, row in enumerate(self.rows):
            if len(row) != len(self.header):
                raise StandardizeError(
                    f"row {i + 1} has {len(row)} fields, header has {len(self.header)}"
                )


StandardValue = float | str | _Missing


@dataclass(frozen=True)
class StandardizedRecord:
    georef: GeoPoint | None
    values: Mapping[str, StandardValue]


# Actions: set-missing = a correction (invalid placeholder, unknown code,
# unparseable number); declared-missing = the source itself said absent.
@dataclass(frozen=True)
class Issue:
    row: int  # 1-based data row
    column: str
    action: str  # set-missing | declared-missing | no-georef
    reason: str
    raw: str = ""


def apply_codebook(raw: str, cb: Codebook) -> str | _Missing:
    """Resolve a raw categorical code to its standardized label.

    Missing codes win over the mapping (they are disjoint by
    construction). Codes in neither set raise: that is an incomplete
    codebook, not a data problem to paper over silently.
    """
    if raw in cb.missing_codes:
        return MISSING
    if raw in cb.mapping:
        return cb.mapping[raw]
    raise UnknownCodeError(raw)


def detect_invalid_numeric(value: float, rules: tuple[InvalidRule, ...] | list[InvalidRule]) -> float | _Missing:
    """Missing iff any rule fires; sentinel comparison is exact on the double."""
    for rule in rules:
        if rule.fires(value):
            return MISSING
    return value


def convert_unit(value: float, scale: float, offset: float) -> float:
    if scale == 0:
        raise ModelError("unit scale must be nonzero")
    return value * scale + offset


_RASTER_HEADER = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def parse_portable_raster(text: str) -> RasterGrid:
    """Parse the six-line-header portable grid format.

    Header lines are `<key> <value>` in fixed order (ncols, nrows,
    xllcorner, yllcorner, cellsize, nodata_value), then nrows lines of
    ncols space-separated values, first line northernmost.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 6:
        raise RasterFormatError("malformed-header", f"expected 6 header lines, got {len(lines)}")

    header: dict[str, float] = {}
    for expected_key, line in zip(_RASTER_HEADER, lines[:6]):
        parts = line.split()
        if len(parts) != 2:
            raise RasterFormatError("malformed-header", f"bad header line {line!r}")
        key, raw = parts
        if key.lower() != expected_key:
            raise RasterFormatError(
                "malformed-header", f"expected {expected_key!r}, got {key!r}"
            )
        try:
            header[expected_key] = float(raw)
        except ValueError:
            raise RasterFormatError(
                "malformed-header", f"unparseable value {raw!r} for {expected_key}"
            ) from None

    for int_key in ("ncols", "nrows"):
        if header[int_key] != int(header[int_key]):
            raise RasterFormatError("malformed-header", f"{int_key} must be an integer")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if ncols <= 0 or nrows <= 0:
        raise RasterFormatError("malformed-header", f"ncols/nrows must be positive ({ncols}x{nrows})")

    body = lines[6:]
    if len(body) != nrows:
        raise RasterFormatError("shape-mismatch", f"expected {nrows} data rows, got {len(body)}")
    values: list[list[float]] = []
    for i, line in enumerate(body):
        row: list[float] = []
        for tok in line.split():
            try:
                row.append(float(tok))
            except ValueError:
                raise RasterFormatError("non-numeric-cell", f"row {i}: {tok!r}") from None
        if len(row) != ncols:
            raise RasterFormatError("shape-mismatch", f"row {i} has {len(row)} values, expected {ncols}")
        values.append(row)

    return RasterGrid(
        ncols=ncols,
        nrows=nrows,
        xllcorner=header["xllcorner"],
        yllcorner=header["yllcorner"],
        cellsize=header["cellsize"],
        nodata_value=header["nodata_value"],
        values=values,
    )


def format_portable_raster(grid: RasterGrid) -> str:
    """Render a grid back into the portable text format (parse inverse)."""
    out = io.StringIO()
    out.write(f"ncols {grid.ncols}\n")
    out.write(f"nrows {grid.nrows}\n")
    out.write(f"xllcorner {grid.xllcorner!r}\n")
    out.write(f"yllcorner {grid.yllcorner!r}\n")
    out.write(f"cellsize {grid.cellsize!r}\n")
    out.write(f"nodata_value {grid.nodata_value!r}\n")
    for row in grid.values:
        out.write(" ".join(repr(v) for v in row) + "\n")
    return out.getvalue()


def read_raw_csv(text: str) -> RawTable:
    reader = csv.reader(io.StringIO(text))
    rows = [tuple(r) for r in reader]
    if not rows:
        return RawTable(header=(), rows=())
    return RawTable(header=rows[0], rows=tuple(rows[1:]))


def _standardize_cell(
    raw: str,
    cmap: ColumnMap,
    codebooks: Mapping[str, Codebook],
    row_no: int,
    issues: list[Issue],
) -> StandardValue:
    stripped = raw.strip()
    if stripped == "":
        issues.append(Issue(row_no, cmap.source_column, "declared-missing", "empty-cell"))
        return MISSING

    if cmap.text:
        return stripped

    if cmap.codebook_ref is not None:
        cb = codebooks[cmap.codebook_ref]
        try:
            label = apply_codebook(stripped, cb)
        except UnknownCodeError:
            issues.append(Issue(row_no, cmap.source_column, "set-missing", "unknown-code", stripped))
            return MISSING
        if label is MISSING:
            issues.append(
                Issue(row_no, cmap.source_column, "declared-missing", "missing-code", stripped)
            )
        return label

    try:
        number = float(stripped)
    except ValueError:
        issues.append(Issue(row_no, cmap.source_column, "set-missing", "unparseable-number", stripped))
        return MISSING
    checked = detect_invalid_numeric(number, cmap.invalid_rules)
    if checked is MISSING:
        issues.append(Issue(row_no, cmap.source_column, "set-missing", "invalid-placeholder", stripped))
        return MISSING
    return convert_unit(checked, cmap.scale, cmap.offset)


def standardize_table(
    raw: RawTable,
    schema: FusionSchema,
    codebooks: Mapping[str, Codebook] | None = None,
) -> tuple[list[StandardizedRecord], list[Issue]]:
    """Apply a schema's column maps to every row of a raw table.

    Every cell of every non-georef column yields exactly one of: a
    non-Missing output value, or a Missing plus one issue entry. That
    accounting is the no-silent-loss property the tests pin down.
    """
    if schema.kind is not SourceKind.SAMPLE_STRUCTURED:
        raise StandardizeError("standardize_table handles sample-structured schemas only")
    codebooks = codebooks or {}

    header_set = set(raw.header)
    assert schema.georef_columns is not None  # schema invariant
    lon_col, lat_col = schema.georef_columns
    for needed in (lon_col, lat_col):
        if raw.header and needed not in header_set:
            raise StandardizeError(f"georef column {needed!r} not in header")
    maps_by_column = {m.source_column: m for m in schema.column_maps}
    for col in maps_by_column:
        if raw.header and col not in header_set:
            raise StandardizeError(f"mapped column {col!r} not in header")
    for m in schema.column_maps:
        if m.codebook_ref is not None and m.codebook_ref not in codebooks:
            raise StandardizeError(f"codebook {m.codebook_ref!r} not provided")

    records: list[StandardizedRecord] = []
    issues: list[Issue] = []
    for row_idx, row in enumerate(raw.rows):
        row_no = row_idx + 1
        by_col = dict(zip(raw.header, row))

        georef: GeoPoint | None = None
        try:
            georef = GeoPoint(float(by_col[lon_col]), float(by_col[lat_col]))
        except (ValueError, ModelError):
            issues.append(
                Issue(row_no, lon_col, "no-georef", "unparseable-coordinates",
                      f"{by_col[lon_col]},{by_col[lat_col]}")
            )

        values: dict[str, StandardValue] = {}
        for col in raw.header:
            if col in (lon_col, lat_col):
                continue
            cell_raw = by_col[col]
            cmap = maps_by_column.get(col)
            if cmap is not None:
                values[col] = _standardize_cell(cell_raw, cmap, codebooks, row_no, issues)
            else:
                # unmapped columns pass through as text; nothing is dropped silently
                stripped = cell_raw.strip()
                if stripped == "":
                    issues.append(Issue(row_no, col, "declared-missing", "empty-cell"))
                    values[col] = MISSING
                else:
                    values[col] = stripped
        records.append(StandardizedRecord(georef=georef, values=values))

    return records, issues


# ---------------------------------------------------------------------------
# standardized-table persistence (CSV + sidecar metadata)
# ---------------------------------------------------------------------------


def write_standardized(
    records: list[StandardizedRecord],
    schema: FusionSchema,
    header: tuple[str, ...],
) -> tuple[str, dict]:
    """Serialize records to CSV text plus the sidecar metadata document.

    Column order follows the raw header; Missing is an empty cell. The
    sidecar records per-column typing so the CSV can be reread without
    the schema.
    """
    assert schema.georef_columns is not None
    lon_col, lat_col = schema.georef_columns
    value_cols = [c for c in header if c not in (lon_col, lat_col)]
    maps_by_column = {m.source_column: m for m in schema.column_maps}

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([lon_col, lat_col, *value_cols])
    for rec in records:
        row: list[str] = []
        if rec.georef is None:
            row += ["", ""]
        else:
            row += [repr(rec.georef.lon), repr(rec.georef.lat)]
        for col in value_cols:
            v = rec.values.get(col, MISSING)
            if v is MISSING:
                row.append("")
            elif isinstance(v, float):
                row.append(repr(v))
            else:
                row.append(str(v))
        writer.writerow(row)

    columns_meta = {}
    for col in value_cols:
        cmap = maps_by_column.get(col)
        if cmap is None:
            kind = "text"
            meta: dict = {"kind": kind}
        else:
            kind = "text" if cmap.text else ("code" if cmap.codebook_ref else "number")
            meta = {"kind": kind, "target": cmap.target_feature_id}
            if cmap.component is not None:
                meta["component"] = cmap.component
            if cmap.codebook_ref is not None:
                meta["codebook"] = cmap.codebook_ref
        columns_meta[col] = meta
    sidecar = {
        "dataset_id": schema.dataset_id,
        "kind": schema.kind.value,
        "georef_columns": [lon_col, lat_col],
        "columns": columns_meta,
    }
    return buf.getvalue(), sidecar


def read_standardized(csv_text: str, sidecar: Mapping) -> list[StandardizedRecord]:
    """Reread a standardized CSV using its sidecar's column typing."""
    reader = csv.reader(io.StringIO(csv_text))
    rows = list(reader)
    if not rows:
        return []
    header = rows[0]
    lon_col, lat_col = sidecar["georef_columns"]
    columns: Mapping[str, Mapping] = sidecar["columns"]
    records: list[StandardizedRecord] = []
    for row in rows[1:]:
        by_col = dict(zip(header, row))
        georef: GeoPoint | None = None
        if by_col.get(lon_col, "") != "" and by_col.get(lat_col, "") != "":
            georef = GeoPoint(float(by_col[lon_col]), float(by_col[lat_col]))
        values: dict[str, StandardValue] = {}
        for col, meta in columns.items():
            raw = by_col.get(col, "")
            if raw == "":
                values[col] = MISSING
            elif meta["kind"] == "number":
                values[col] = float(raw)
            else:
                values[col] = raw
        records.append(StandardizedRecord(georef=georef, values=values))
    return records
