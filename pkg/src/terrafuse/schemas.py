"""Load fusion schema documents, codebooks, and feature registries."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from terrafuse.export import feature_from_doc
from terrafuse.fuse import ScreeningMeta
from terrafuse.model import (
    Codebook,
    ColumnMap,
    FeatureDef,
    FusionSchema,
    InvalidRule,
    SourceKind,
)


class SchemaDocumentError(ValueError):
    pass


@dataclass(frozen=True)
class SchemaDocument:
    schema: FusionSchema
    meta: ScreeningMeta
    codebooks: dict[str, Codebook]


def load_codebook(path: str) -> Codebook:
    with open(path) as fh:
        doc = json.load(fh)
    return Codebook(
        mapping=dict(doc["mapping"]),
        missing_codes=frozenset(doc.get("missing_codes", [])),
    )


def _column_map_from_doc(doc: dict) -> ColumnMap:
    return ColumnMap(
        source_column=doc["source_column"],
        target_feature_id=doc["target_feature_id"],
        scale=float(doc.get("scale", 1.0)),
        offset=float(doc.get("offset", 0.0)),
        codebook_ref=doc.get("codebook"),
        invalid_rules=tuple(
            InvalidRule(r["kind"], float(r["threshold"])) for r in doc.get("invalid_rules", [])
        ),
        component=doc.get("component"),
        text=bool(doc.get("text", False)),
    )


def load_schema_document(path: str) -> SchemaDocument:
    """Parse one schema document; codebook paths resolve relative to it."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        kind = SourceKind(doc["kind"])
        georef = doc.get("georef_columns")
        schema = FusionSchema(
            dataset_id=doc["dataset_id"],
            kind=kind,
            column_maps=tuple(_column_map_from_doc(m) for m in doc["column_maps"]),
            resolution_m=doc.get("resolution_m"),
            georef_columns=tuple(georef) if georef else None,
        )
    except (KeyError, ValueError) as exc:
        raise SchemaDocumentError(f"{path}: {exc}") from exc

    base = os.path.dirname(os.path.abspath(path))
    codebooks = {
        ref: load_codebook(os.path.join(base, rel))
        for ref, rel in doc.get("codebooks", {}).items()
    }
    for m in schema.column_maps:
        if m.codebook_ref is not None and m.codebook_ref not in codebooks:
            raise SchemaDocumentError(f"{path}: codebook {m.codebook_ref!r} not declared")

    meta = ScreeningMeta(
        kind=kind,
        has_georef=schema.georef_columns is not None or kind is SourceKind.MAP_STRUCTURED,
        resolution_m=schema.resolution_m,
        is_long_term_projection=bool(doc.get("is_long_term_projection", False)),
    )
    return SchemaDocument(schema=schema, meta=meta, codebooks=codebooks)


def load_features_document(path: str) -> list[FeatureDef]:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise SchemaDocumentError(f"{path}: feature registry must be a list")
    return [feature_from_doc(d) for d in doc]
