"""Read and write training-view directories and visual-feature stores.

The view directory layout is the fusion pipeline's export format:
``manifest.json`` plus flat CSVs (numeric/categorical matrices, 0/1
observation masks, visual refs, split tags, normalization stats). This
module speaks that format directly from the files; it never imports the
pipeline's code.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

TRAIN, EVAL = "train", "eval"

_MODALITIES = ("scalar_num", "vector_num", "categorical", "text", "image_ref")


class ViewIOError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    """One column family of the view, as declared in its manifest."""

    id: str
    name: str = ""
    unit: str = ""
    theme: str = ""
    modality: str = "scalar_num"
    annotation: str = ""
    vector_dim: int | None = None
    vocabulary: tuple[str, ...] | None = None
    asset: bool = False

    def __post_init__(self) -> None:
        if self.modality not in _MODALITIES:
            raise ViewIOError(f"feature {self.id!r}: unknown modality {self.modality!r}")
        if self.modality == "vector_num" and (self.vector_dim is None or self.vector_dim < 1):
            raise ViewIOError(f"feature {self.id!r}: vector feature needs vector_dim >= 1")
        if self.modality == "categorical":
            if not self.vocabulary:
                raise ViewIOError(f"feature {self.id!r}: categorical feature needs a vocabulary")
            if len(set(self.vocabulary)) != len(self.vocabulary):
                raise ViewIOError(f"feature {self.id!r}: vocabulary has duplicates")


def feature_spec_from_doc(doc: dict) -> FeatureSpec:
    vocab = doc.get("vocabulary")
    return FeatureSpec(
        id=doc["id"],
        name=doc.get("name", ""),
        unit=doc.get("unit", ""),
        theme=doc.get("theme", ""),
        modality=doc.get("modality", "scalar_num"),
        annotation=doc.get("annotation", ""),
        vector_dim=doc.get("vector_dim"),
        vocabulary=tuple(vocab) if vocab is not None else None,
        asset=bool(doc.get("asset", False)),
    )


def feature_spec_to_doc(f: FeatureSpec) -> dict:
    doc: dict = {
        "id": f.id,
        "name": f.name,
        "unit": f.unit,
        "theme": f.theme,
        "modality": f.modality,
        "annotation": f.annotation,
    }
    if f.vector_dim is not None:
        doc["vector_dim"] = f.vector_dim
    if f.vocabulary is not None:
        doc["vocabulary"] = list(f.vocabulary)
    if f.asset:
        doc["asset"] = True
    return doc


def column_name(fid: str, component: int | None) -> str:
    return fid if component is None else f"{fid}_{component}"


@dataclass
class View:
    """In-memory training view.

    ``numeric`` keeps a 0.0 placeholder and ``categorical`` a -1 code
    wherever the matching mask bit is 0; nothing is imputed.
    """

    features: list[FeatureSpec]
    numeric_columns: list[tuple[str, int | None]]
    categorical_features: list[str]
    visual_features: list[str]
    sample_ids: list[str]
    numeric: np.ndarray
    numeric_mask: np.ndarray
    categorical: np.ndarray
    categorical_mask: np.ndarray
    visual_refs: list[list[str | None]]
    split_tags: list[str]
    norm_stats: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    def split_indices(self, tag: str) -> np.ndarray:
        return np.asarray([i for i, t in enumerate(self.split_tags) if t == tag], dtype=np.int64)

    def feature_by_id(self, fid: str) -> FeatureSpec:
        for f in self.features:
            if f.id == fid:
                return f
        raise ViewIOError(f"unknown feature {fid!r}")

    def numeric_span(self, fid: str) -> tuple[int, int]:
        """(first column index, column count) of a numeric feature."""
        cols = [i for i, (f, _) in enumerate(self.numeric_columns) if f == fid]
        if not cols:
            raise ViewIOError(f"{fid!r} has no numeric columns")
        if cols != list(range(cols[0], cols[0] + len(cols))):
            raise ViewIOError(f"{fid!r} columns are not contiguous")
        return cols[0], len(cols)

    def validate(self) -> None:
        n = self.n_samples
        shapes = {
            "numeric": (n, len(self.numeric_columns)),
            "numeric_mask": (n, len(self.numeric_columns)),
            "categorical": (n, len(self.categorical_features)),
            "categorical_mask": (n, len(self.categorical_features)),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if tuple(got) != want:
                raise ViewIOError(f"{name} shape {got} != {want}")
        if len(self.visual_refs) != n or len(self.split_tags) != n:
            raise ViewIOError("visual_refs/split_tags length mismatch")
        ids = {f.id for f in self.features}
        for fid, _ in self.numeric_columns:
            if fid not in ids:
                raise ViewIOError(f"numeric column for undeclared feature {fid!r}")
        for fid in (*self.categorical_features, *self.visual_features):
            if fid not in ids:
                raise ViewIOError(f"undeclared feature {fid!r}")


def _read_rows(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ViewIOError(f"{os.path.basename(path)} is empty") from None
        return header, list(reader)


def _read_matrix(path: str, want_cols: list[str], sample_ids: list[str] | None):
    header, rows = _read_rows(path)
    if header[1:] != want_cols:
        raise ViewIOError(f"{os.path.basename(path)}: column header mismatch")
    ids = [r[0] for r in rows]
    if sample_ids is not None and ids != sample_ids:
        raise ViewIOError(f"{os.path.basename(path)}: sample order mismatch")
    for r in rows:
        if len(r) != len(want_cols) + 1:
            raise ViewIOError(f"{os.path.basename(path)}: ragged row {r[0]!r}")
    return ids, [r[1:] for r in rows]


def load_view(view_dir: str) -> View:
    try:
        with open(os.path.join(view_dir, "manifest.json")) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ViewIOError(f"manifest.json: {exc}") from exc
    if manifest.get("format_version") != 1:
        raise ViewIOError(f"unsupported view format_version {manifest.get('format_version')!r}")

    features = [feature_spec_from_doc(d) for d in manifest["features"]]
    numeric_columns = [(fid, comp) for fid, comp in manifest["numeric_columns"]]
    categorical_features = list(manifest["categorical_features"])
    visual_features = list(manifest["visual_features"])
    by_id = {f.id: f for f in features}

    num_names = [column_name(fid, c) for fid, c in numeric_columns]
    sample_ids, num_cells = _read_matrix(os.path.join(view_dir, "numeric.csv"), num_names, None)
    _, num_mask_cells = _read_matrix(os.path.join(view_dir, "numeric_mask.csv"), num_names, sample_ids)
    _, cat_cells = _read_matrix(
        os.path.join(view_dir, "categorical.csv"), categorical_features, sample_ids)
    _, cat_mask_cells = _read_matrix(
        os.path.join(view_dir, "categorical_mask.csv"), categorical_features, sample_ids)
    _, vis_cells = _read_matrix(os.path.join(view_dir, "visual.csv"), visual_features, sample_ids)

    n, c, k = len(sample_ids), len(numeric_columns), len(categorical_features)
    numeric = np.zeros((n, c), dtype=np.float64)
    numeric_mask = np.zeros((n, c), dtype=np.uint8)
    for i, (vals, bits) in enumerate(zip(num_cells, num_mask_cells)):
        for j, (raw, bit) in enumerate(zip(vals, bits)):
            if bit == "1":
                numeric_mask[i, j] = 1
                try:
                    numeric[i, j] = float(raw)
                except ValueError:
                    raise ViewIOError(f"numeric.csv: bad value {raw!r} at {sample_ids[i]}") from None
            elif bit != "0":
                raise ViewIOError(f"numeric_mask.csv: bad bit {bit!r} at {sample_ids[i]}")

    # Cells hold vocabulary indices, not labels; the vocabulary itself
    # lives only in the manifest.
    categorical = np.full((n, k), -1, dtype=np.int64)
    categorical_mask = np.zeros((n, k), dtype=np.uint8)
    vocab_size = {fid: len(by_id[fid].vocabulary or ()) for fid in categorical_features}
    for i, (vals, bits) in enumerate(zip(cat_cells, cat_mask_cells)):
        for j, (raw, bit) in enumerate(zip(vals, bits)):
            if bit == "1":
                fid = categorical_features[j]
                try:
                    code = int(raw)
                except ValueError:
                    raise ViewIOError(
                        f"categorical.csv: bad code {raw!r} at {sample_ids[i]}") from None
                if not 0 <= code < vocab_size[fid]:
                    raise ViewIOError(
                        f"categorical.csv: code {code} outside {fid!r} vocabulary "
                        f"(size {vocab_size[fid]}) at {sample_ids[i]}")
                categorical_mask[i, j] = 1
                categorical[i, j] = code
            elif bit != "0":
                raise ViewIOError(f"categorical_mask.csv: bad bit {bit!r} at {sample_ids[i]}")

    visual_refs = [[cell if cell != "" else None for cell in row] for row in vis_cells]

    header, split_rows = _read_rows(os.path.join(view_dir, "splits.csv"))
    if header != ["sample_id", "split"]:
        raise ViewIOError("splits.csv: bad header")
    if [r[0] for r in split_rows] != sample_ids:
        raise ViewIOError("splits.csv: sample order mismatch")
    split_tags = [r[1] for r in split_rows]

    norm_stats: dict[str, tuple[float, float]] = {}
    stats_path = os.path.join(view_dir, "norm_stats.csv")
    if os.path.exists(stats_path):
        header, stat_rows = _read_rows(stats_path)
        if header != ["column", "mean", "std"]:
            raise ViewIOError("norm_stats.csv: bad header")
        for name, mean, std in stat_rows:
            norm_stats[name] = (float(mean), float(std))

    view = View(
        features=features,
        numeric_columns=numeric_columns,
        categorical_features=categorical_features,
        visual_features=visual_features,
        sample_ids=sample_ids,
        numeric=numeric,
        numeric_mask=numeric_mask,
        categorical=categorical,
        categorical_mask=categorical_mask,
        visual_refs=visual_refs,
        split_tags=split_tags,
        norm_stats=norm_stats,
    )
    view.validate()
    return view


def save_view(view: View, out_dir: str) -> None:
    """Write ``view`` in the same file layout ``load_view`` reads.

    Exists so synthetic views can be fed to the command-line entry
    points and so the reader is testable by round-trip; the fusion
    pipeline remains the canonical producer.
    """
    view.validate()
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "format_version": 1,
        "features": [feature_spec_to_doc(f) for f in view.features],
        "numeric_columns": [[fid, comp] for fid, comp in view.numeric_columns],
        "categorical_features": view.categorical_features,
        "visual_features": view.visual_features,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")

    def write_csv(name: str, header: list[str], rows) -> None:
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)

    num_names = [column_name(fid, c) for fid, c in view.numeric_columns]
    write_csv("numeric.csv", ["sample_id", *num_names],
              ([sid, *[repr(float(v)) if m == 1 else "" for v, m in zip(vals, bits)]]
               for sid, vals, bits in zip(view.sample_ids, view.numeric, view.numeric_mask)))
    write_csv("numeric_mask.csv", ["sample_id", *num_names],
              ([sid, *[int(b) for b in bits]]
               for sid, bits in zip(view.sample_ids, view.numeric_mask)))

    write_csv("categorical.csv", ["sample_id", *view.categorical_features],
              ([sid, *[str(int(code)) if m == 1 else ""
                       for code, m in zip(codes, bits)]]
               for sid, codes, bits in zip(view.sample_ids, view.categorical, view.categorical_mask)))
    write_csv("categorical_mask.csv", ["sample_id", *view.categorical_features],
              ([sid, *[int(b) for b in bits]]
               for sid, bits in zip(view.sample_ids, view.categorical_mask)))
    write_csv("visual.csv", ["sample_id", *view.visual_features],
              ([sid, *["" if r is None else r for r in refs]]
               for sid, refs in zip(view.sample_ids, view.visual_refs)))
    write_csv("splits.csv", ["sample_id", "split"],
              (list(pair) for pair in zip(view.sample_ids, view.split_tags)))
    if view.norm_stats:
        write_csv("norm_stats.csv", ["column", "mean", "std"],
                  ([name, repr(mean), repr(std)]
                   for name, (mean, std) in view.norm_stats.items()))


class VisualStore:
    """Precomputed per-sample visual token blocks, one matrix per image."""

    def __init__(self, root: str, n_tokens: int, dim: int, files: dict[str, str]):
        self.root = root
        self.n_tokens = n_tokens
        self.dim = dim
        self.files = files

    def get(self, sample_id: str) -> np.ndarray | None:
        rel = self.files.get(sample_id)
        if rel is None:
            return None
        block = np.load(os.path.join(self.root, rel))
        if block.shape != (self.n_tokens, self.dim):
            raise ViewIOError(
                f"visual block for {sample_id!r} has shape {block.shape}, "
                f"expected {(self.n_tokens, self.dim)}")
        return np.asarray(block, dtype=np.float64)


def load_visual_store(store_dir: str) -> VisualStore:
    try:
        with open(os.path.join(store_dir, "manifest.json")) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ViewIOError(f"visual manifest: {exc}") from exc
    if doc.get("format_version") != 1:
        raise ViewIOError(f"unsupported visual format_version {doc.get('format_version')!r}")
    return VisualStore(store_dir, int(doc["n_tokens"]), int(doc["dim"]), dict(doc["files"]))


def save_visual_store(store_dir: str, n_tokens: int, dim: int,
                      blocks: dict[str, np.ndarray]) -> VisualStore:
    os.makedirs(os.path.join(store_dir, "blocks"), exist_ok=True)
    files = {}
    for sid, block in blocks.items():
        block = np.asarray(block, dtype=np.float64)
        if block.shape != (n_tokens, dim):
            raise ViewIOError(f"block for {sid!r} has shape {block.shape}")
        rel = os.path.join("blocks", f"{sid}.npy")
        np.save(os.path.join(store_dir, rel), block)
        files[sid] = rel
    with open(os.path.join(store_dir, "manifest.json"), "w") as fh:
        json.dump({"format_version": 1, "n_tokens": n_tokens, "dim": dim, "files": files},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    return VisualStore(store_dir, n_tokens, dim, files)
