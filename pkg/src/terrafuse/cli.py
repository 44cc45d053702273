"""Command-line entry points.

Every subcommand that writes outputs also writes a run manifest beside
them, so a pipeline can be audited and replayed from the recorded input
digests.  Exit codes: 0 success, 1 caught validation/runtime failure,
2 argument errors (argparse default).
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

from terrafuse import __version__
from terrafuse.export import (
    dumps_dictionary,
    export_dictionary,
    export_flat_table,
    import_dictionary,
    loads_dictionary,
)
from terrafuse.fuse import FusionReport, fuse_sources
from terrafuse.manifest import ManifestTimer, write_manifest
from terrafuse.model import FusedTable, SourceKind
from terrafuse.render import heatmap_csv, render_heatmap_svg
from terrafuse.schemas import load_features_document, load_schema_document
from terrafuse.standardize import (
    format_portable_raster,
    parse_portable_raster,
    read_raw_csv,
    read_standardized,
    standardize_table,
    write_standardized,
)
from terrafuse.stats import compute_availability, summarize_alignment
from terrafuse.view import (
    build_training_view,
    filter_training_view,
    fit_apply_zscore,
    save_view,
    split_by_location,
)

GEOCODER_URL_ENV = "TERRAFUSE_GEOCODER_URL"


class CliError(Exception):
    """Failure the user can fix; printed to stderr, exit 1."""


def _write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_json(path: str, doc: object) -> None:
    _write_text(path, json.dumps(doc, indent=2, ensure_ascii=False, sort_keys=True) + "\n")


def _load_fused(path: str) -> FusedTable:
    try:
        with open(path) as fh:
            return import_dictionary(loads_dictionary(fh.read()))
    except OSError as exc:
        raise CliError(f"cannot read fused table: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise CliError(f"{path}: not a valid fused-table dictionary: {exc}") from exc


# -- standardize -------------------------------------------------------

def _cmd_standardize(args: argparse.Namespace) -> int:
    timer = ManifestTimer(
        command="standardize",
        inputs=[args.in_path, args.spec],
        flags={},
    )
    doc = load_schema_document(args.spec)
    schema = doc.schema
    if schema.kind is not SourceKind.SAMPLE_STRUCTURED:
        raise CliError("standardize applies to sample-structured sources only")

    with open(args.in_path, newline="") as fh:
        raw = read_raw_csv(fh.read())
    records, issues = standardize_table(raw, schema, doc.codebooks)
    csv_text, sidecar = write_standardized(records, schema, raw.header)

    out_csv = os.path.join(args.out, f"{schema.dataset_id}.csv")
    out_meta = os.path.join(args.out, f"{schema.dataset_id}.meta.json")
    out_report = os.path.join(args.out, f"{schema.dataset_id}.report.json")
    _write_text(out_csv, csv_text)
    _write_json(out_meta, sidecar)
    _write_json(out_report, {
        "dataset_id": schema.dataset_id,
        "rows": len(records),
        "issues": [
            {"row": i.row, "column": i.column, "action": i.action,
             "reason": i.reason, "raw": i.raw}
            for i in issues
        ],
    })
    manifest = timer.finish(outputs=[out_csv, out_meta], report_path=out_report)
    write_manifest(manifest, os.path.join(args.out, f"{schema.dataset_id}.manifest.json"))
    print(f"standardized {len(records)} records, {len(issues)} issues -> {out_csv}")
    return 0


# -- fuse --------------------------------------------------------------

def _collect_schema_paths(schemas_dir: str) -> tuple[str, list[str]]:
    features_path = os.path.join(schemas_dir, "features.json")
    if not os.path.isfile(features_path):
        raise CliError(f"missing feature registry: {features_path}")
    paths = sorted(
        p for p in glob.glob(os.path.join(schemas_dir, "*.schema.json"))
    )
    if not paths:
        raise CliError(f"no *.schema.json documents in {schemas_dir}")
    return features_path, paths


def _load_source(std_dir: str, doc) -> object:
    """Fetch the standardized payload a schema document points at."""
    ds = doc.schema.dataset_id
    if doc.schema.kind is SourceKind.SAMPLE_STRUCTURED:
        csv_path = os.path.join(std_dir, f"{ds}.csv")
        meta_path = os.path.join(std_dir, f"{ds}.meta.json")
        try:
            with open(csv_path, newline="") as fh:
                csv_text = fh.read()
            with open(meta_path) as fh:
                sidecar = json.load(fh)
        except OSError as exc:
            raise CliError(f"standardized source for {ds!r} not found: {exc}") from exc
        return read_standardized(csv_text, sidecar)
    grid_path = os.path.join(std_dir, f"{ds}.grid")
    try:
        with open(grid_path) as fh:
            return parse_portable_raster(fh.read())
    except OSError as exc:
        raise CliError(f"raster for {ds!r} not found: {exc}") from exc


def _report_doc(report: FusionReport) -> dict:
    return {
        "excluded": [
            {"dataset_id": ds, "reason": reason} for ds, reason in report.excluded
        ],
        "datasets": [
            {
                "dataset_id": r.dataset_id,
                "kind": r.kind,
                "samples_created": r.samples_created,
                "cells_written": r.cells_written,
                "cells_missing": r.cells_missing,
                "out_of_extent": r.out_of_extent,
                "records_skipped_no_georef": r.records_skipped_no_georef,
                "warnings": list(r.warnings),
            }
            for r in report.schema_reports
        ],
    }


def _cmd_fuse(args: argparse.Namespace) -> int:
    timer = ManifestTimer(
        command="fuse",
        inputs=[args.std, args.schemas],
        flags={},
    )
    features_path, schema_paths = _collect_schema_paths(args.schemas)
    features = load_features_document(features_path)
    docs = [load_schema_document(p) for p in schema_paths]

    ids = [d.schema.dataset_id for d in docs]
    if len(set(ids)) != len(ids):
        raise CliError("duplicate dataset_id across schema documents")

    sources = {d.schema.dataset_id: _load_source(args.std, d) for d in docs}
    metas = {d.schema.dataset_id: d.meta for d in docs}
    table, report = fuse_sources(
        features=features,
        schemas=[d.schema for d in docs],
        sources=sources,
        metas=metas,
    )
    doc, warnings = export_dictionary(table)
    out_table = os.path.join(args.out, "fused.json")
    out_report = os.path.join(args.out, "fusion_report.json")
    _write_text(out_table, dumps_dictionary(doc))
    _write_json(out_report, _report_doc(report))
    manifest = timer.finish(outputs=[out_table], report_path=out_report)
    write_manifest(manifest, os.path.join(args.out, "fuse.manifest.json"))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    written = sum(r.cells_written for r in report.schema_reports)
    print(f"fused {len(table.samples)} samples, {written} cells -> {out_table}")
    return 0


# -- stats -------------------------------------------------------------

def _cmd_stats(args: argparse.Namespace) -> int:
    timer = ManifestTimer(command="stats", inputs=[args.fused], flags={})
    table = _load_fused(args.fused)
    stats = compute_availability(table)

    surveys = sorted({s.source_survey for s in table.samples})
    themes = sorted({t for (t, _) in stats.matrix})
    values = [
        [stats.matrix.get((theme, survey), 0.0) for survey in surveys]
        for theme in themes
    ]
    alignment = {}
    for f in table.features:
        summary = summarize_alignment(table, f.id)
        alignment[f.id] = (
            None if summary is None
            else {"min_m": summary.min_m, "mean_m": summary.mean_m, "max_m": summary.max_m}
        )

    out_stats = os.path.join(args.out, "availability.json")
    _write_json(out_stats, {
        "per_feature": stats.per_feature,
        "histogram": list(stats.histogram),
        "matrix": [
            {"theme": t, "survey": s, "fraction": v}
            for (t, s), v in sorted(stats.matrix.items())
        ],
        "alignment": alignment,
    })
    outputs = [out_stats]
    if themes and surveys:
        svg = render_heatmap_svg(themes, surveys, values)
        csv_text = heatmap_csv(themes, surveys, values)
        out_svg = os.path.join(args.out, "availability.svg")
        out_csv = os.path.join(args.out, "availability.csv")
        _write_text(out_svg, svg)
        _write_text(out_csv, csv_text)
        outputs += [out_svg, out_csv]
    manifest = timer.finish(outputs=outputs, report_path=out_stats)
    write_manifest(manifest, os.path.join(args.out, "stats.manifest.json"))
    print(f"availability for {len(table.features)} features -> {out_stats}")
    return 0


# -- export ------------------------------------------------------------

def _cmd_export(args: argparse.Namespace) -> int:
    timer = ManifestTimer(
        command="export",
        inputs=[args.fused],
        flags={"format": args.format},
    )
    table = _load_fused(args.fused)
    if args.format == "dict":
        doc, warnings = export_dictionary(table, assets_root=args.assets_root)
        out = os.path.join(args.out, "dictionary.json")
        _write_text(out, dumps_dictionary(doc))
    else:
        csv_text, meta = export_flat_table(table)
        out = os.path.join(args.out, "flat.csv")
        meta_path = os.path.join(args.out, "flat.meta.json")
        _write_text(out, csv_text)
        _write_json(meta_path, meta)
        warnings = []
    manifest = timer.finish(outputs=[out], report_path=None)
    write_manifest(manifest, os.path.join(args.out, f"export_{args.format}.manifest.json"))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"exported {len(table.samples)} samples -> {out}")
    return 0


# -- filter ------------------------------------------------------------

def _cmd_filter(args: argparse.Namespace) -> int:
    timer = ManifestTimer(
        command="filter",
        inputs=[args.fused],
        flags={
            "min_avail": args.min_avail,
            "max_align_m": args.max_align_m,
            "eval_fraction": args.eval_fraction,
            "seed": args.seed,
        },
    )
    table = _load_fused(args.fused)
    kept, exclusions = filter_training_view(
        table, min_avail=args.min_avail, max_align_m=args.max_align_m
    )
    tags = split_by_location(table, eval_fraction=args.eval_fraction, seed=args.seed)
    view = build_training_view(table, kept, tags, exclusions=exclusions)
    norm_stats, view = fit_apply_zscore(view)
    save_view(view, norm_stats, args.out)
    manifest = timer.finish(
        outputs=[os.path.join(args.out, "manifest.json")],
        report_path=os.path.join(args.out, "exclusions.csv"),
    )
    write_manifest(manifest, os.path.join(args.out, "filter.manifest.json"))
    print(
        f"kept {len(view.features)} features, "
        f"{len(view.sample_ids)} samples -> {args.out}"
    )
    return 0


# -- serve -------------------------------------------------------------

def build_service_state(fused_path: str, gazetteer_path: str, regions_path: str):
    """Wire a service state from on-disk artifacts; split out for tests."""
    from terrafuse.query.gazetteer import load_gazetteer
    from terrafuse.query.regions import load_regions
    from terrafuse.query.service import ServiceState

    table = _load_fused(fused_path)
    regions = load_regions(open(regions_path).read())
    with open(gazetteer_path, newline="") as fh:
        gazetteer = load_gazetteer(fh.read(), known_region_ids=set(regions))
    return ServiceState(
        table=table,
        gazetteer=gazetteer,
        regions=regions,
        external_geocoder_url=os.environ.get(GEOCODER_URL_ENV),
    )


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from terrafuse.query.service import create_app

    state = build_service_state(args.fused, args.gazetteer, args.regions)
    app = create_app(state)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# -- raster utility ----------------------------------------------------

def _cmd_raster_roundtrip(args: argparse.Namespace) -> int:
    """Parse and re-serialize a grid; a changed file means a dialect drift."""
    with open(args.in_path) as fh:
        grid = parse_portable_raster(fh.read())
    _write_text(args.out, format_portable_raster(grid))
    print(f"{grid.ncols}x{grid.nrows} grid -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="terrafuse",
        description="Fuse heterogeneous geo-referenced tabular sources.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("standardize", help="standardize one raw survey table")
    p.add_argument("--in", dest="in_path", required=True, metavar="CSV")
    p.add_argument("--spec", required=True, metavar="SCHEMA_JSON")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_standardize)

    p = sub.add_parser("fuse", help="fuse standardized sources into one table")
    p.add_argument("--std", required=True, metavar="DIR")
    p.add_argument("--schemas", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("stats", help="availability and alignment summaries")
    p.add_argument("--fused", required=True, metavar="JSON")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("export", help="write dictionary or flat exports")
    p.add_argument("--fused", required=True, metavar="JSON")
    p.add_argument("--format", required=True, choices=["dict", "flat"])
    p.add_argument("--assets-root", default=None, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("filter", help="build a normalized training view")
    p.add_argument("--fused", required=True, metavar="JSON")
    p.add_argument("--min-avail", type=float, default=0.5)
    p.add_argument("--max-align-m", type=float, default=200.0)
    p.add_argument("--eval-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("serve", help="run the HTTP query service")
    p.add_argument("--fused", required=True, metavar="JSON")
    p.add_argument("--gazetteer", required=True, metavar="CSV")
    p.add_argument("--regions", required=True, metavar="JSON")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("raster-roundtrip", help="normalize a portable raster file")
    p.add_argument("--in", dest="in_path", required=True, metavar="GRID")
    p.add_argument("--out", required=True, metavar="GRID")
    p.set_defaults(func=_cmd_raster_roundtrip)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
