"""Lossless dictionary export/import and the flattened table export.

The dictionary document is the canonical on-disk form of a fused
table: it carries the feature definitions and every observed cell with
full provenance, and export -> import -> export is a byte-level fixed
point. The flat export is a one-way convenience view (CSV plus column
metadata) for spreadsheet-style consumers.
"""

from __future__ import annotations

import csv
import io
import json
import os
from typing import Mapping

from terrafuse.model import (
    Category,
    Cell,
    CellValue,
    FeatureDef,
    FusedTable,
    GeoPoint,
    ImageRef,
    Modality,
    Provenance,
    Sample,
    Scalar,
    SourceKind,
    Text,
    Vector,
)
from terrafuse.stats import summarize_alignment

FORMAT_VERSION = 1


class ExportError(ValueError):
    pass


def feature_to_doc(f: FeatureDef) -> dict:
    doc: dict = {
        "id": f.id,
        "name": f.name,
        "unit": f.unit,
        "theme": f.theme,
        "modality": f.modality.value,
        "annotation": f.annotation,
    }
    if f.vector_dim is not None:
        doc["vector_dim"] = f.vector_dim
    if f.vocabulary is not None:
        doc["vocabulary"] = list(f.vocabulary)
    if f.asset:
        doc["asset"] = True
    return doc


def feature_from_doc(doc: Mapping) -> FeatureDef:
    return FeatureDef(
        id=doc["id"],
        name=doc["name"],
        unit=doc.get("unit", ""),
        theme=doc.get("theme", ""),
        modality=Modality(doc["modality"]),
        vector_dim=doc.get("vector_dim"),
        vocabulary=tuple(doc["vocabulary"]) if "vocabulary" in doc else None,
        annotation=doc.get("annotation", ""),
        asset=bool(doc.get("asset", False)),
    )


def _value_to_doc(value: CellValue):
    if isinstance(value, Scalar):
        return value.value
    if isinstance(value, Vector):
        return list(value.values)
    if isinstance(value, (Category, Text)):
        return value.label if isinstance(value, Category) else value.text
    if isinstance(value, ImageRef):
        return value.path
    raise ExportError(f"cannot export cell value {value!r}")


def _value_from_doc(feat: FeatureDef, raw) -> CellValue:
    if feat.modality is Modality.SCALAR_NUM:
        return Scalar(float(raw))
    if feat.modality is Modality.VECTOR_NUM:
        if isinstance(raw, str):
            return ImageRef(raw)  # asset-held vector payload
        return Vector(tuple(float(v) for v in raw))
    if feat.modality is Modality.CATEGORICAL:
        return Category(str(raw))
    if feat.modality is Modality.TEXT:
        return Text(str(raw))
    return ImageRef(str(raw))


def export_dictionary(
    table: FusedTable, assets_root: str | None = None
) -> tuple[dict, list[str]]:
    """Sample-keyed document with per-cell metadata; Missing is absent.

    Asset references are checked against ``assets_root`` when given;
    unreadable paths produce warnings but the references are kept.
    """
    warnings: list[str] = []
    samples_doc: dict = {}
    for s in table.samples:
        features_doc: dict = {}
        for fid, cell in s.cells.items():
            feat = table.feature_map[fid]
            features_doc[fid] = {
                "value": _value_to_doc(cell.value),
                "unit": feat.unit,
                "source_dataset_id": cell.provenance.source_dataset_id,
                "source_kind": cell.provenance.source_kind.value,
                "alignment_distance_m": cell.provenance.alignment_distance_m,
            }
            if isinstance(cell.value, ImageRef) and assets_root is not None:
                if not os.path.exists(os.path.join(assets_root, cell.value.path)):
                    warnings.append(f"{s.sample_id}/{fid}: asset {cell.value.path} unreadable")
        samples_doc[s.sample_id] = {
            "survey": s.source_survey,
            "lon": s.location.lon,
            "lat": s.location.lat,
            "features": features_doc,
        }
    doc = {
        "format_version": FORMAT_VERSION,
        "features": [feature_to_doc(f) for f in table.features],
        "samples": samples_doc,
    }
    return doc, warnings


def import_dictionary(doc: Mapping) -> FusedTable:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ExportError(f"unsupported format_version {doc.get('format_version')!r}")
    features = [feature_from_doc(fd) for fd in doc["features"]]
    feature_map = {f.id: f for f in features}
    samples: list[Sample] = []
    for sid, sdoc in doc["samples"].items():
        cells: dict[str, Cell] = {}
        for fid, cdoc in sdoc["features"].items():
            feat = feature_map.get(fid)
            if feat is None:
                raise ExportError(f"{sid}: cell for unknown feature {fid}")
            cells[fid] = Cell(
                value=_value_from_doc(feat, cdoc["value"]),
                provenance=Provenance(
                    source_dataset_id=cdoc["source_dataset_id"],
                    source_kind=SourceKind(cdoc["source_kind"]),
                    alignment_distance_m=float(cdoc["alignment_distance_m"]),
                ),
            )
        samples.append(
            Sample(
                sample_id=sid,
                location=GeoPoint(float(sdoc["lon"]), float(sdoc["lat"])),
                source_survey=sdoc["survey"],
                cells=cells,
            )
        )
    return FusedTable(features, samples)


def dumps_dictionary(doc: Mapping) -> str:
    """Canonical serialization: stable key order (insertion), repr floats."""
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def loads_dictionary(text: str) -> dict:
    return json.loads(text)


# ---------------------------------------------------------------------------
# flat export
# ---------------------------------------------------------------------------


def _flat_columns(features: list[FeatureDef]) -> list[tuple[str, str, int | None]]:
    """(column name, feature id, component index or None), d columns per vector."""
    cols: list[tuple[str, str, int | None]] = []
    for f in features:
        if f.modality is Modality.VECTOR_NUM and not f.asset:
            assert f.vector_dim is not None
            for d in range(1, f.vector_dim + 1):
                cols.append((f"{f.id}_{d}", f.id, d))
        else:
            cols.append((f.id, f.id, None))
    return cols


def export_flat_table(table: FusedTable) -> tuple[str, dict]:
    """Samples as rows, one column per scalar dimension; Missing is empty.

    Column metadata consolidates each feature's source datasets and its
    alignment summary; vector columns share their feature's entry.
    """
    cols = _flat_columns(table.features)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample_id", "survey", "lon", "lat", *[c[0] for c in cols]])
    for s in table.samples:
        row: list[str] = [s.sample_id, s.source_survey, repr(s.location.lon), repr(s.location.lat)]
        for _, fid, component in cols:
            cell = s.cells.get(fid)
            if cell is None:
                row.append("")
                continue
            v = cell.value
            if isinstance(v, Scalar):
                row.append(repr(v.value))
            elif isinstance(v, Vector):
                assert component is not None
                row.append(repr(v.values[component - 1]))
            elif isinstance(v, Category):
                row.append(v.label)
            elif isinstance(v, Text):
                row.append(v.text)
            elif isinstance(v, ImageRef):
                row.append(v.path)
            else:
                row.append("")
        writer.writerow(row)

    columns_meta: dict = {}
    for name, fid, component in cols:
        feat = table.feature_map[fid]
        sources = sorted(
            {
                s.cells[fid].provenance.source_dataset_id
                for s in table.samples
                if fid in s.cells
            }
        )
        summary = summarize_alignment(table, fid)
        entry: dict = {
            "feature_id": fid,
            "name": feat.name,
            "unit": feat.unit,
            "theme": feat.theme,
            "modality": feat.modality.value,
            "sources": sources,
            "alignment_m": None
            if summary is None
            else {"min": summary.min_m, "mean": summary.mean_m, "max": summary.max_m},
        }
        if component is not None:
            entry["component"] = component
        columns_meta[name] = entry
    return buf.getvalue(), {"format_version": FORMAT_VERSION, "columns": columns_meta}
