"""Availability and alignment statistics over a fused table."""

from __future__ import annotations

from dataclasses import dataclass

from terrafuse.model import FusedTable, SourceKind


@dataclass(frozen=True)
class AvailabilityStats:
    per_feature: dict[str, float]
    matrix: dict[tuple[str, str], float]  # (theme, survey) -> mean availability
    histogram: list[int]  # 10 equal bins over [0, 1]


HIST_BINS = 10


def compute_availability(table: FusedTable) -> AvailabilityStats:
    """Observed-cell fractions per feature, per (theme, survey), binned.

    The denominator is always the full sample count (or that survey's
    sample count for the matrix); missingness is never hidden by
    shrinking the denominator.
    """
    n = len(table.samples)
    per_feature: dict[str, float] = {}
    for feat in table.features:
        observed = sum(1 for s in table.samples if feat.id in s.cells)
        per_feature[feat.id] = observed / n if n else 0.0

    surveys = sorted({s.source_survey for s in table.samples})
    themes = sorted({f.theme for f in table.features})
    matrix: dict[tuple[str, str], float] = {}
    for survey in surveys:
        members = [s for s in table.samples if s.source_survey == survey]
        for theme in themes:
            feats = [f for f in table.features if f.theme == theme]
            if not feats or not members:
                continue
            fractions = [
                sum(1 for s in members if f.id in s.cells) / len(members) for f in feats
            ]
            matrix[(theme, survey)] = sum(fractions) / len(fractions)

    histogram = [0] * HIST_BINS
    for frac in per_feature.values():
        idx = min(int(frac * HIST_BINS), HIST_BINS - 1)
        histogram[idx] += 1

    return AvailabilityStats(per_feature=per_feature, matrix=matrix, histogram=histogram)


@dataclass(frozen=True)
class AlignmentSummary:
    min_m: float
    mean_m: float
    max_m: float


def summarize_alignment(table: FusedTable, feature_id: str) -> AlignmentSummary | None:
    """Min/mean/max provenance distance over observed cells; None if none."""
    if feature_id not in table.feature_map:
        raise KeyError(f"unknown feature {feature_id}")
    distances = [
        s.cells[feature_id].provenance.alignment_distance_m
        for s in table.samples
        if feature_id in s.cells
    ]
    if not distances:
        return None
    return AlignmentSummary(
        min_m=min(distances),
        mean_m=sum(distances) / len(distances),
        max_m=max(distances),
    )


def source_kinds(table: FusedTable, feature_id: str) -> set[SourceKind]:
    return {
        s.cells[feature_id].provenance.source_kind
        for s in table.samples
        if feature_id in s.cells
    }
