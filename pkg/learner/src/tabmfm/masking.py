"""Active-mask planning for masked-feature training.

A plan lists, per sample, which observed tabular features get hidden
this pass. Masking is per feature: hiding a vector feature hides all of
its tokens. Visual blocks are never mask targets (there is no
reconstruction head for them).
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass

import numpy as np

from tabmfm.layout import TokenLayout
from tabmfm.viewio import View


class MaskError(ValueError):
    pass


def derive_rng(seed: int, *tags) -> random.Random:
    """Independent, reproducible stream for (seed, tags)."""
    blob = ":".join([str(seed), *[str(t) for t in tags]]).encode()
    state = int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")
    return random.Random(state)


def sample_mask(observed_ids, ratio: float, rng: random.Random,
                mode: str = "fixed") -> tuple[str, ...]:
    """Pick the features to hide for one sample.

    ``fixed``: floor(ratio * n) ids without replacement, at least one
    when two or more are observed; a lone observed feature is never
    masked (the sample then contributes no loss). ``bernoulli``: each id
    independently with probability ``ratio``, falling back to one
    uniform pick when the draw comes up empty and n >= 2.
    """
    ids = list(observed_ids)
    n = len(ids)
    if n <= 1:
        return ()
    if mode == "fixed":
        k = max(1, math.floor(ratio * n))
        picked = rng.sample(ids, k)
    elif mode == "bernoulli":
        picked = [fid for fid in ids if rng.random() < ratio]
        if not picked:
            picked = [rng.choice(ids)]
    else:
        raise MaskError(f"unknown mask mode {mode!r}")
    return tuple(sorted(picked))


@dataclass(frozen=True)
class MaskPlan:
    """Per-sample masked feature ids, aligned with a batch's rows."""

    rows: tuple[tuple[str, ...], ...]

    def __len__(self) -> int:
        return len(self.rows)

    def as_sets(self) -> list[set[str]]:
        return [set(r) for r in self.rows]


def observed_feature_matrix(view: View, layout: TokenLayout) -> np.ndarray:
    """(n_samples, n_features) 0/1: feature fully observed for sample.

    A vector feature counts as observed only when every component is;
    partially observed vectors are treated as missing throughout.
    """
    n = view.n_samples
    out = np.zeros((n, layout.n_features), dtype=np.uint8)
    for e in layout.numeric:
        start, width = view.numeric_span(e.feature_id)
        if width != e.dim:
            raise MaskError(f"{e.feature_id!r}: layout dim {e.dim} != view width {width}")
        out[:, e.feature_index] = np.all(
            view.numeric_mask[:, start:start + width] == 1, axis=1)
    for e in layout.categorical:
        col = view.categorical_features.index(e.feature_id)
        out[:, e.feature_index] = view.categorical_mask[:, col]
    return out


def plan_for_rows(view: View, layout: TokenLayout, row_indices, ratio: float,
                  rng: random.Random, mode: str = "fixed") -> MaskPlan:
    observed = observed_feature_matrix(view, layout)
    order = layout.tabular_feature_ids
    rows = []
    for i in row_indices:
        ids = [fid for fid, bit in zip(order, observed[i]) if bit == 1]
        rows.append(sample_mask(ids, ratio, rng, mode=mode))
    return MaskPlan(rows=tuple(rows))
