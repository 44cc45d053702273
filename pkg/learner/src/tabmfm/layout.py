"""Token layout: how view features map onto transformer token positions.

Token indices are assigned walking the features in view order: one token
per scalar dimension (so a d-dim vector owns d consecutive tokens), one
token per categorical feature, then one block of latent tokens for the
visual feature. Numeric features are additionally grouped by dimension
so parameters can be stored as one batched tensor per group.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from tabmfm.config import ModelConfig
from tabmfm.viewio import FeatureSpec


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class NumericEntry:
    feature_id: str
    dim: int
    token_start: int  # dim consecutive tokens
    feature_index: int  # row in the per-feature missing-embedding table
    group: int  # which dimension group holds this feature's parameters
    row: int  # row within that group's batched tensors


@dataclass(frozen=True)
class CategoricalEntry:
    feature_id: str
    vocabulary: tuple[str, ...]
    token: int
    feature_index: int
    vocab_offset: int  # start of this vocabulary in the unified table
    index: int  # position among categorical entries


@dataclass(frozen=True)
class TokenLayout:
    numeric: tuple[NumericEntry, ...]
    categorical: tuple[CategoricalEntry, ...]
    groups: tuple[tuple[int, tuple[str, ...]], ...]  # (dim, feature ids)
    visual_feature: str | None
    n_visual: int
    visual_start: int  # -1 when there is no visual block
    tabular_tokens: int
    total_tokens: int
    vocab_size: int

    def numeric_entry(self, fid: str) -> NumericEntry:
        for e in self.numeric:
            if e.feature_id == fid:
                return e
        raise LayoutError(f"{fid!r} is not a numeric feature of this layout")

    def categorical_entry(self, fid: str) -> CategoricalEntry:
        for e in self.categorical:
            if e.feature_id == fid:
                return e
        raise LayoutError(f"{fid!r} is not a categorical feature of this layout")

    @property
    def n_features(self) -> int:
        return len(self.numeric) + len(self.categorical)

    @property
    def tabular_feature_ids(self) -> tuple[str, ...]:
        order = sorted(
            [(e.feature_index, e.feature_id) for e in self.numeric]
            + [(e.feature_index, e.feature_id) for e in self.categorical])
        return tuple(fid for _, fid in order)


def _feature_dim(f: FeatureSpec) -> int:
    if f.modality == "scalar_num":
        return 1
    if f.modality == "vector_num":
        return f.vector_dim or 0
    raise LayoutError(f"feature {f.id!r} is not numeric")


def build_token_layout(features: list[FeatureSpec], config: ModelConfig) -> TokenLayout:
    numeric: list[NumericEntry] = []
    categorical: list[CategoricalEntry] = []
    group_order: list[int] = []  # dims in first-appearance order
    group_members: dict[int, list[str]] = {}
    visual: str | None = None
    next_token = 0
    feature_index = 0
    vocab_offset = 0

    for f in features:
        if f.modality == "text":
            raise LayoutError(f"feature {f.id!r}: text features are not supported")
        if f.modality == "image_ref":
            if visual is not None:
                raise LayoutError("more than one visual feature is not supported")
            visual = f.id
            continue
        if f.modality == "categorical":
            vocab = f.vocabulary or ()
            categorical.append(CategoricalEntry(
                feature_id=f.id, vocabulary=vocab, token=next_token,
                feature_index=feature_index, vocab_offset=vocab_offset,
                index=len(categorical)))
            next_token += 1
            vocab_offset += len(vocab)
        else:
            dim = _feature_dim(f)
            if dim not in group_members:
                group_members[dim] = []
                group_order.append(dim)
            row = len(group_members[dim])
            group_members[dim].append(f.id)
            numeric.append(NumericEntry(
                feature_id=f.id, dim=dim, token_start=next_token,
                feature_index=feature_index, group=group_order.index(dim), row=row))
            next_token += dim
        feature_index += 1

    tabular = next_token
    n_visual = config.n_visual_latent if visual is not None else 0
    if visual is not None and n_visual >= tabular:
        raise LayoutError(
            f"visual block of {n_visual} tokens would not be smaller than "
            f"the {tabular} tabular tokens")

    return TokenLayout(
        numeric=tuple(numeric),
        categorical=tuple(categorical),
        groups=tuple((dim, tuple(group_members[dim])) for dim in group_order),
        visual_feature=visual,
        n_visual=n_visual,
        visual_start=tabular if visual is not None else -1,
        tabular_tokens=tabular,
        total_tokens=tabular + n_visual,
        vocab_size=vocab_offset,
    )


def layout_digest(layout: TokenLayout) -> str:
    """Stable fingerprint of everything parameter shapes depend on."""
    doc = {
        "version": 1,
        "numeric": [
            {"id": e.feature_id, "dim": e.dim, "token_start": e.token_start,
             "feature_index": e.feature_index}
            for e in layout.numeric],
        "categorical": [
            {"id": e.feature_id, "vocabulary": list(e.vocabulary), "token": e.token,
             "feature_index": e.feature_index, "vocab_offset": e.vocab_offset}
            for e in layout.categorical],
        "visual_feature": layout.visual_feature,
        "n_visual": layout.n_visual,
        "total_tokens": layout.total_tokens,
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
