"""Build the ML-ready training view: filter, split, normalize, persist.

The view flattens kept features into a numeric matrix (one column per
scalar dimension) plus index-coded categoricals, with explicit 0/1
observation masks. Missing entries keep a 0.0 placeholder and a 0 mask
bit; nothing is imputed here.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import random
from dataclasses import dataclass, field, replace

from terrafuse.export import feature_from_doc, feature_to_doc
from terrafuse.model import (
    Category,
    FeatureDef,
    FusedTable,
    ImageRef,
    Modality,
    Scalar,
    Vector,
    location_key,
)

TRAIN, EVAL = "train", "eval"


class ViewError(ValueError):
    pass


@dataclass(frozen=True)
class ExclusionEntry:
    feature_id: str
    rule: str  # modality | availability | alignment | constant
    detail: str


def _numeric_dims(feat: FeatureDef) -> list[int | None]:
    if feat.modality is Modality.SCALAR_NUM:
        return [None]
    if feat.modality is Modality.VECTOR_NUM and not feat.asset:
        assert feat.vector_dim is not None
        return list(range(1, feat.vector_dim + 1))
    return []


def _column_values(table: FusedTable, fid: str, component: int | None) -> list[float]:
    out = []
    for s in table.samples:
        cell = s.cells.get(fid)
        if cell is None:
            continue
        v = cell.value
        if isinstance(v, Scalar):
            out.append(v.value)
        elif isinstance(v, Vector) and component is not None:
            out.append(v.values[component - 1])
    return out


def filter_training_view(
    table: FusedTable,
    min_avail: float = 0.5,
    max_align_m: float = 200.0,
    drop_modalities: frozenset[Modality] = frozenset({Modality.TEXT}),
) -> tuple[list[FeatureDef], list[ExclusionEntry]]:
    """Keep a feature iff it clears every rule; name the first failure.

    Rules, in order: dropped modality, availability >= min_avail, max
    alignment <= max_align_m, and (numeric only) no constant observed
    column, which would make z-scoring degenerate.
    """
    if min_avail <= 0 or max_align_m <= 0:
        raise ViewError("thresholds must be positive")
    n = len(table.samples)
    kept: list[FeatureDef] = []
    excluded: list[ExclusionEntry] = []
    for feat in table.features:
        if feat.modality in drop_modalities:
            excluded.append(ExclusionEntry(feat.id, "modality", feat.modality.value))
            continue
        observed = sum(1 for s in table.samples if feat.id in s.cells)
        availability = observed / n if n else 0.0
        if availability < min_avail:
            excluded.append(
                ExclusionEntry(feat.id, "availability", f"{availability:.4f} < {min_avail}")
            )
            continue
        distances = [
            s.cells[feat.id].provenance.alignment_distance_m
            for s in table.samples
            if feat.id in s.cells
        ]
        worst = max(distances) if distances else 0.0
        if worst > max_align_m:
            excluded.append(ExclusionEntry(feat.id, "alignment", f"max {worst:.1f} m > {max_align_m}"))
            continue
        constant_detail: str | None = None
        for component in _numeric_dims(feat):
            values = _column_values(table, feat.id, component)
            if values and len(set(values)) == 1:
                constant_detail = (
                    "single observed value"
                    if component is None
                    else f"component {component} constant"
                )
                break
        if constant_detail is not None:
            excluded.append(ExclusionEntry(feat.id, "constant", constant_detail))
            continue
        kept.append(feat)
    return kept, excluded


def split_by_location(table: FusedTable, eval_fraction: float, seed: int) -> dict[str, str]:
    """Tag samples train/eval by shuffling unique locations, not samples.

    Co-located samples always share a tag, so repeated visits cannot
    leak across the split. floor(eval_fraction * n_locations) locations
    go to eval.
    """
    if not 0 < eval_fraction < 1:
        raise ViewError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    keys = sorted(table.location_index)
    rng = random.Random(seed)
    rng.shuffle(keys)
    n_eval = math.floor(eval_fraction * len(keys))
    eval_keys = set(keys[:n_eval])
    tags: dict[str, str] = {}
    for s in table.samples:
        tags[s.sample_id] = EVAL if location_key(s.location) in eval_keys else TRAIN
    return tags


@dataclass
class TrainingView:
    features: list[FeatureDef]
    sample_ids: list[str]
    numeric_columns: list[tuple[str, int | None]]  # (feature_id, component)
    numeric: list[list[float]]
    numeric_mask: list[list[int]]
    categorical_features: list[str]
    categorical: list[list[int]]  # vocabulary index; 0 placeholder where mask 0
    categorical_mask: list[list[int]]
    visual_features: list[str]
    visual_refs: list[list[str | None]]
    split_tags: list[str]
    exclusions: list[ExclusionEntry] = field(default_factory=list)

    @property
    def feature_map(self) -> dict[str, FeatureDef]:
        return {f.id: f for f in self.features}

    def rows_with_tag(self, tag: str) -> list[int]:
        return [i for i, t in enumerate(self.split_tags) if t == tag]


@dataclass(frozen=True)
class NormalizationStats:
    columns: list[str]
    mean: list[float]
    std: list[float]


def column_name(fid: str, component: int | None) -> str:
    return fid if component is None else f"{fid}_{component}"


def build_training_view(
    table: FusedTable,
    kept: list[FeatureDef],
    split_tags: dict[str, str],
    exclusions: list[ExclusionEntry] | None = None,
) -> TrainingView:
    numeric_columns: list[tuple[str, int | None]] = []
    categorical_features: list[str] = []
    visual_features: list[str] = []
    for feat in kept:
        for component in _numeric_dims(feat):
            numeric_columns.append((feat.id, component))
        if feat.modality is Modality.CATEGORICAL:
            categorical_features.append(feat.id)
        if feat.modality is Modality.IMAGE_REF or (feat.modality is Modality.VECTOR_NUM and feat.asset):
            visual_features.append(feat.id)

    feature_map = {f.id: f for f in kept}
    numeric: list[list[float]] = []
    numeric_mask: list[list[int]] = []
    categorical: list[list[int]] = []
    categorical_mask: list[list[int]] = []
    visual_refs: list[list[str | None]] = []
    for s in table.samples:
        num_row: list[float] = []
        num_mask_row: list[int] = []
        for fid, component in numeric_columns:
            cell = s.cells.get(fid)
            if cell is None:
                num_row.append(0.0)
                num_mask_row.append(0)
                continue
            v = cell.value
            if isinstance(v, Scalar):
                num_row.append(v.value)
            elif isinstance(v, Vector):
                assert component is not None
                num_row.append(v.values[component - 1])
            else:
                num_row.append(0.0)
                num_mask_row.append(0)
                continue
            num_mask_row.append(1)
        cat_row: list[int] = []
        cat_mask_row: list[int] = []
        for fid in categorical_features:
            cell = s.cells.get(fid)
            if cell is None or not isinstance(cell.value, Category):
                cat_row.append(0)
                cat_mask_row.append(0)
            else:
                vocab = feature_map[fid].vocabulary
                assert vocab is not None
                cat_row.append(vocab.index(cell.value.label))
                cat_mask_row.append(1)
        vis_row: list[str | None] = []
        for fid in visual_features:
            cell = s.cells.get(fid)
            vis_row.append(cell.value.path if cell is not None and isinstance(cell.value, ImageRef) else None)
        numeric.append(num_row)
        numeric_mask.append(num_mask_row)
        categorical.append(cat_row)
        categorical_mask.append(cat_mask_row)
        visual_refs.append(vis_row)

    return TrainingView(
        features=kept,
        sample_ids=[s.sample_id for s in table.samples],
        numeric_columns=numeric_columns,
        numeric=numeric,
        numeric_mask=numeric_mask,
        categorical_features=categorical_features,
        categorical=categorical,
        categorical_mask=categorical_mask,
        visual_features=visual_features,
        visual_refs=visual_refs,
        split_tags=[split_tags[s.sample_id] for s in table.samples],
        exclusions=list(exclusions or []),
    )


def fit_apply_zscore(view: TrainingView, train_tag: str = TRAIN) -> tuple[NormalizationStats, TrainingView]:
    """Population mean/std from observed train cells; applied to every split.

    Masked placeholders are left untouched. A train column with fewer
    than two distinct observed values cannot be scaled and is an error:
    the filter should have removed it.
    """
    train_rows = view.rows_with_tag(train_tag)
    means: list[float] = []
    stds: list[float] = []
    names: list[str] = []
    for j, (fid, component) in enumerate(view.numeric_columns):
        values = [view.numeric[i][j] for i in train_rows if view.numeric_mask[i][j] == 1]
        name = column_name(fid, component)
        if len(set(values)) < 2:
            raise ViewError(f"column {name}: constant or empty on the train split")
        mean = sum(values) / len(values)
        var = sum((x - mean) ** 2 for x in values) / len(values)
        means.append(mean)
        stds.append(math.sqrt(var))
        names.append(name)

    transformed = [row[:] for row in view.numeric]
    for i in range(len(transformed)):
        for j in range(len(view.numeric_columns)):
            if view.numeric_mask[i][j] == 1:
                transformed[i][j] = (transformed[i][j] - means[j]) / stds[j]
    stats = NormalizationStats(columns=names, mean=means, std=stds)
    return stats, replace(view, numeric=transformed)


# ---------------------------------------------------------------------------
# persistence (plain columnar text files)
# ---------------------------------------------------------------------------


def _write_matrix_csv(
    path: str, sample_ids: list[str], columns: list[str], rows: list[list], mask: list[list[int]],
    fmt=repr,
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", *columns])
        for sid, row, mrow in zip(sample_ids, rows, mask):
            writer.writerow([sid, *[fmt(v) if m == 1 else "" for v, m in zip(row, mrow)]])


def _write_mask_csv(path: str, sample_ids: list[str], columns: list[str], mask: list[list[int]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", *columns])
        for sid, row in zip(sample_ids, mask):
            writer.writerow([sid, *row])


def save_view(view: TrainingView, stats: NormalizationStats | None, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "format_version": 1,
        "features": [feature_to_doc(f) for f in view.features],
        "numeric_columns": [[fid, component] for fid, component in view.numeric_columns],
        "categorical_features": view.categorical_features,
        "visual_features": view.visual_features,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")

    num_names = [column_name(fid, c) for fid, c in view.numeric_columns]
    _write_matrix_csv(os.path.join(out_dir, "numeric.csv"), view.sample_ids, num_names,
                      view.numeric, view.numeric_mask)
    _write_mask_csv(os.path.join(out_dir, "numeric_mask.csv"), view.sample_ids, num_names,
                    view.numeric_mask)
    _write_matrix_csv(os.path.join(out_dir, "categorical.csv"), view.sample_ids,
                      view.categorical_features, view.categorical, view.categorical_mask, fmt=str)
    _write_mask_csv(os.path.join(out_dir, "categorical_mask.csv"), view.sample_ids,
                    view.categorical_features, view.categorical_mask)

    with open(os.path.join(out_dir, "visual.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", *view.visual_features])
        for sid, refs in zip(view.sample_ids, view.visual_refs):
            writer.writerow([sid, *["" if r is None else r for r in refs]])

    with open(os.path.join(out_dir, "splits.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "split"])
        for sid, tag in zip(view.sample_ids, view.split_tags):
            writer.writerow([sid, tag])

    if stats is not None:
        with open(os.path.join(out_dir, "norm_stats.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["column", "mean", "std"])
            for name, mean, std in zip(stats.columns, stats.mean, stats.std):
                writer.writerow([name, repr(mean), repr(std)])

    with open(os.path.join(out_dir, "exclusions.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature_id", "rule", "detail"])
        for entry in view.exclusions:
            writer.writerow([entry.feature_id, entry.rule, entry.detail])


def _read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def load_view(view_dir: str) -> tuple[TrainingView, NormalizationStats | None]:
    with open(os.path.join(view_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    features = [feature_from_doc(d) for d in manifest["features"]]
    numeric_columns = [(fid, component) for fid, component in manifest["numeric_columns"]]

    _, num_rows = _read_csv(os.path.join(view_dir, "numeric.csv"))
    _, num_mask_rows = _read_csv(os.path.join(view_dir, "numeric_mask.csv"))
    _, cat_rows = _read_csv(os.path.join(view_dir, "categorical.csv"))
    _, cat_mask_rows = _read_csv(os.path.join(view_dir, "categorical_mask.csv"))
    _, vis_rows = _read_csv(os.path.join(view_dir, "visual.csv"))
    _, split_rows = _read_csv(os.path.join(view_dir, "splits.csv"))

    sample_ids = [r[0] for r in split_rows]
    numeric = []
    numeric_mask = []
    for vals, masks in zip(num_rows, num_mask_rows):
        mask_bits = [int(m) for m in masks[1:]]
        numeric_mask.append(mask_bits)
        numeric.append([float(v) if m == 1 else 0.0 for v, m in zip(vals[1:], mask_bits)])
    categorical = []
    categorical_mask = []
    for vals, masks in zip(cat_rows, cat_mask_rows):
        mask_bits = [int(m) for m in masks[1:]]
        categorical_mask.append(mask_bits)
        categorical.append([int(v) if m == 1 else 0 for v, m in zip(vals[1:], mask_bits)])
    visual_refs: list[list[str | None]] = [
        [None if v == "" else v for v in r[1:]] for r in vis_rows
    ]

    stats = None
    stats_path = os.path.join(view_dir, "norm_stats.csv")
    if os.path.exists(stats_path):
        _, stat_rows = _read_csv(stats_path)
        stats = NormalizationStats(
            columns=[r[0] for r in stat_rows],
            mean=[float(r[1]) for r in stat_rows],
            std=[float(r[2]) for r in stat_rows],
        )

    exclusions = []
    excl_path = os.path.join(view_dir, "exclusions.csv")
    if os.path.exists(excl_path):
        _, excl_rows = _read_csv(excl_path)
        exclusions = [ExclusionEntry(*r) for r in excl_rows]

    view = TrainingView(
        features=features,
        sample_ids=sample_ids,
        numeric_columns=numeric_columns,
        numeric=numeric,
        numeric_mask=numeric_mask,
        categorical_features=manifest["categorical_features"],
        categorical=categorical,
        categorical_mask=categorical_mask,
        visual_features=manifest["visual_features"],
        visual_refs=visual_refs,
        split_tags=[r[1] for r in split_rows],
        exclusions=exclusions,
    )
    return view, stats
