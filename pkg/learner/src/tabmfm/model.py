"""The masked-feature transformer: encoding, visual compression, heads.

Encoding rule: an observed, unmasked numeric dimension becomes
value * weight + bias with per-token learned weight/bias; an observed,
unmasked categorical becomes a unified-table lookup at the feature's
vocabulary offset. Actively masked and natively missing entries both
collapse to the feature's missing embedding through one shared code
path, so the two are bit-identical at encoding and the model cannot
tell them apart. Learned per-token positional embeddings are added on
top; a visual latent block, when the layout has one, is appended last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from tabmfm.config import ModelConfig
from tabmfm.layout import TokenLayout
from tabmfm.losses import (
    cross_entropy,
    hetero_categorical_term,
    hetero_numeric_term,
    sigma_from_s,
    squared_residual,
)
from tabmfm.masking import MaskPlan, observed_feature_matrix
from tabmfm.viewio import View, VisualStore


class ModelError(ValueError):
    pass


@dataclass
class Batch:
    """Tensor-packed view rows. Numeric values arrive z-scored."""

    sample_ids: list[str]
    numeric: torch.Tensor  # (b, n_numeric_columns)
    categorical: torch.Tensor  # (b, n_categorical) codes, -1 where missing
    feature_observed: torch.Tensor  # (b, n_features) bool, feature-level
    visual: torch.Tensor | None  # (b, n_visual_in, visual_feature_dim)
    visual_present: torch.Tensor | None  # (b,) bool

    def __len__(self) -> int:
        return len(self.sample_ids)


def make_batch(view: View, layout: TokenLayout, row_indices, dtype: torch.dtype,
               visual_store: VisualStore | None = None,
               config: ModelConfig | None = None) -> Batch:
    rows = list(int(i) for i in row_indices)
    observed = observed_feature_matrix(view, layout)  # validates span alignment

    # layout numeric entries follow view column order; double-check
    start = 0
    for e in layout.numeric:
        got_start, got_width = view.numeric_span(e.feature_id)
        if (got_start, got_width) != (start, e.dim):
            raise ModelError(f"{e.feature_id!r}: view columns do not match layout")
        start += e.dim
    for e in layout.categorical:
        if view.categorical_features[e.index] != e.feature_id:
            raise ModelError(f"{e.feature_id!r}: categorical order mismatch")

    numeric = torch.as_tensor(view.numeric[rows], dtype=dtype)
    categorical = torch.as_tensor(view.categorical[rows], dtype=torch.int64)
    feat_obs = torch.as_tensor(observed[rows].astype(bool))

    visual = visual_present = None
    if layout.n_visual > 0:
        if config is None:
            raise ModelError("config is required to pack visual blocks")
        col = view.visual_features.index(layout.visual_feature)
        blocks = np.zeros((len(rows), config.n_visual_in, config.visual_feature_dim))
        present = np.zeros(len(rows), dtype=bool)
        for b, i in enumerate(rows):
            if view.visual_refs[i][col] is None or visual_store is None:
                continue
            block = visual_store.get(view.sample_ids[i])
            if block is None:
                continue
            if block.shape != blocks.shape[1:]:
                raise ModelError(
                    f"visual block shape {block.shape} != "
                    f"{(config.n_visual_in, config.visual_feature_dim)}")
            blocks[b] = block
            present[b] = True
        visual = torch.as_tensor(blocks, dtype=dtype)
        visual_present = torch.as_tensor(present)

    return Batch(
        sample_ids=[view.sample_ids[i] for i in rows],
        numeric=numeric,
        categorical=categorical,
        feature_observed=feat_obs,
        visual=visual,
        visual_present=visual_present,
    )


def active_mask_tensor(plan: MaskPlan, layout: TokenLayout) -> torch.Tensor:
    """(b, n_features) bool from a plan's per-sample feature id sets."""
    index = {}
    for e in layout.numeric:
        index[e.feature_id] = e.feature_index
    for e in layout.categorical:
        index[e.feature_id] = e.feature_index
    out = torch.zeros((len(plan), layout.n_features), dtype=torch.bool)
    for i, fids in enumerate(plan.rows):
        for fid in fids:
            if fid not in index:
                raise ModelError(f"plan names unknown feature {fid!r}")
            out[i, index[fid]] = True
    return out


class _Block(nn.Module):
    """Pre-norm transformer layer."""

    def __init__(self, d_model: int, n_heads: int, ff_dim: int):
        super().__init__()
        self.norm_attn = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.norm_ff = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, ff_dim), nn.GELU(), nn.Linear(ff_dim, d_model))

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        n = self.norm_attn(h)
        h = h + self.attn(n, n, n, need_weights=False)[0]
        return h + self.ff(self.norm_ff(h))


class VisualCompressor(nn.Module):
    """Latent cross-attention squeezing n_in input tokens to n_latent.

    ``input_pos`` carries the only order information about the inputs;
    zero it and the output is invariant to input permutation.
    ``placeholder`` is the learned stand-in block for samples with no
    image.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.d_model
        self.n_in = config.n_visual_in
        self.in_dim = config.visual_feature_dim
        self.proj = nn.Linear(config.visual_feature_dim, d)
        self.input_pos = nn.Parameter(torch.randn(config.n_visual_in, d) * 0.02)
        self.latents = nn.Parameter(torch.randn(config.n_visual_latent, d) * 0.02)
        self.placeholder = nn.Parameter(torch.randn(config.n_visual_latent, d) * 0.02)
        self.norm_q = nn.LayerNorm(d)
        self.norm_kv = nn.LayerNorm(d)
        self.attn = nn.MultiheadAttention(d, config.n_heads, batch_first=True)
        self.norm_ff = nn.LayerNorm(d)
        self.ff = nn.Sequential(
            nn.Linear(d, config.ff_dim), nn.GELU(), nn.Linear(config.ff_dim, d))

    def forward(self, blocks: torch.Tensor) -> torch.Tensor:
        if blocks.ndim != 3 or blocks.shape[1:] != (self.n_in, self.in_dim):
            raise ModelError(
                f"visual input shape {tuple(blocks.shape)} != (b, {self.n_in}, {self.in_dim})")
        x = self.proj(blocks) + self.input_pos.unsqueeze(0)
        q = self.latents.unsqueeze(0).expand(blocks.shape[0], -1, -1)
        kv = self.norm_kv(x)
        lat = q + self.attn(self.norm_q(q), kv, kv, need_weights=False)[0]
        return lat + self.ff(self.norm_ff(lat))


@dataclass
class HeteroPrediction:
    """Per-feature output over a batch: location + log-variance s.

    Numeric features fill ``mu`` (b, dim); categorical fill ``logits``
    (b, vocab). ``s`` is (b,); sigma = exp(s/2) > 0 always.
    """

    kind: str
    s: torch.Tensor
    mu: torch.Tensor | None = None
    logits: torch.Tensor | None = None

    @property
    def sigma(self) -> torch.Tensor:
        return sigma_from_s(self.s)


@dataclass(frozen=True)
class TargetTerm:
    """One (sample, masked feature) contribution, for logs and dumps."""

    sample_id: str
    feature_id: str
    kind: str
    hetero: float
    recon: float
    sigma: float
    correct: bool | None = None


class MaskedFeatureModel(nn.Module):
    """Transformer over the token layout with per-feature decoding heads."""

    def __init__(self, config: ModelConfig, layout: TokenLayout):
        super().__init__()
        if layout.n_visual > 0:
            if layout.n_visual != config.n_visual_latent:
                raise ModelError("layout visual block disagrees with config")
            if config.visual_feature_dim < 1:
                raise ModelError("visual feature present but visual_feature_dim is 0")
        self.config = config
        self.layout = layout
        d = config.d_model

        # numeric parameters, one batched tensor set per dimension group
        self.num_weight = nn.ParameterList()
        self.num_bias = nn.ParameterList()
        self.head_mu_w = nn.ParameterList()
        self.head_mu_b = nn.ParameterList()
        self.head_s_w = nn.ParameterList()
        self.head_s_b = nn.ParameterList()
        for dim, fids in layout.groups:
            f = len(fids)
            self.num_weight.append(nn.Parameter(torch.randn(f, dim, d) * 0.02))
            self.num_bias.append(nn.Parameter(torch.randn(f, dim, d) * 0.02))
            self.head_mu_w.append(nn.Parameter(torch.randn(f, d, dim) * 0.02))
            self.head_mu_b.append(nn.Parameter(torch.zeros(f, dim)))
            self.head_s_w.append(nn.Parameter(torch.randn(f, d) * 0.02))
            self.head_s_b.append(nn.Parameter(torch.zeros(f)))

        self.missing_emb = nn.Parameter(torch.randn(max(layout.n_features, 1), d) * 0.02)
        self.pos = nn.Parameter(torch.randn(layout.total_tokens, d) * 0.02)

        if layout.vocab_size > 0:
            self.vocab_emb = nn.Parameter(torch.randn(layout.vocab_size, d) * 0.02)
            self.cat_logits = nn.Linear(d, layout.vocab_size)
            self.cat_s_w = nn.Parameter(torch.randn(len(layout.categorical), d) * 0.02)
            self.cat_s_b = nn.Parameter(torch.zeros(len(layout.categorical)))

        self.blocks = nn.ModuleList(
            _Block(d, config.n_heads, config.ff_dim) for _ in range(config.n_layers))
        self.final_norm = nn.LayerNorm(d)

        if layout.n_visual > 0:
            self.visual = VisualCompressor(config)

        self._register_index_buffers()
        self._numeric_by_id = {e.feature_id: e for e in layout.numeric}
        self._categorical_by_id = {e.feature_id: e for e in layout.categorical}

    def _register_index_buffers(self) -> None:
        layout = self.layout
        # column start of each numeric feature = sum of dims of the
        # numeric entries before it in layout order
        starts = {}
        acc = 0
        for e in layout.numeric:
            starts[e.feature_id] = acc
            acc += e.dim
        positions: list[int] = []
        for g, (dim, fids) in enumerate(layout.groups):
            entries = sorted((e for e in layout.numeric if e.group == g),
                             key=lambda e: e.row)
            feats = [e.feature_index for e in entries]
            cols = [[starts[e.feature_id] + j for j in range(dim)] for e in entries]
            for e in entries:
                positions.extend(range(e.token_start, e.token_start + dim))
            self.register_buffer(f"_g{g}_cols", torch.tensor(cols, dtype=torch.int64),
                                 persistent=False)
            self.register_buffer(f"_g{g}_feat", torch.tensor(feats, dtype=torch.int64),
                                 persistent=False)
        if layout.categorical:
            positions.extend(e.token for e in layout.categorical)
            self.register_buffer(
                "_cat_offsets",
                torch.tensor([e.vocab_offset for e in layout.categorical], dtype=torch.int64),
                persistent=False)
            self.register_buffer(
                "_cat_feat",
                torch.tensor([e.feature_index for e in layout.categorical], dtype=torch.int64),
                persistent=False)
        inv = [0] * layout.tabular_tokens
        for j, p in enumerate(positions):
            inv[p] = j
        self.register_buffer("_inv_perm", torch.tensor(inv, dtype=torch.int64),
                             persistent=False)

    @property
    def dtype(self) -> torch.dtype:
        return self.missing_emb.dtype

    def compress_visual(self, blocks: torch.Tensor) -> torch.Tensor:
        if self.layout.n_visual == 0:
            raise ModelError("layout has no visual block")
        return self.visual(blocks)

    def encode_batch(self, batch: Batch, plan: MaskPlan) -> torch.Tensor:
        """(b, total_tokens, d_model); masked == natively missing, bitwise."""
        layout = self.layout
        if len(plan) != len(batch):
            raise ModelError(f"plan covers {len(plan)} rows, batch has {len(batch)}")
        active = active_mask_tensor(plan, layout)
        effective = batch.feature_observed & ~active  # the single source of truth

        parts = []
        for g, (dim, fids) in enumerate(layout.groups):
            cols = getattr(self, f"_g{g}_cols")  # (f, dim)
            feats = getattr(self, f"_g{g}_feat")  # (f,)
            values = batch.numeric[:, cols]  # (b, f, dim)
            tok = values.unsqueeze(-1) * self.num_weight[g].unsqueeze(0) \
                + self.num_bias[g].unsqueeze(0)  # (b, f, dim, d)
            miss = self.missing_emb[feats].unsqueeze(0).unsqueeze(2)  # (1, f, 1, d)
            keep = effective[:, feats].unsqueeze(-1).unsqueeze(-1)  # (b, f, 1, 1)
            tok = torch.where(keep, tok, miss)
            parts.append(tok.reshape(len(batch), -1, self.config.d_model))
        if layout.categorical:
            codes = batch.categorical.clamp(min=0) + self._cat_offsets.unsqueeze(0)
            tok = self.vocab_emb[codes]  # (b, k, d)
            miss = self.missing_emb[self._cat_feat].unsqueeze(0)
            keep = effective[:, self._cat_feat].unsqueeze(-1)
            tok = torch.where(keep, tok, miss)
            parts.append(tok)

        tabular = torch.cat(parts, dim=1)[:, self._inv_perm]
        if layout.n_visual > 0:
            if batch.visual is None or batch.visual_present is None:
                raise ModelError("layout has a visual block but the batch carries none")
            lat = self.compress_visual(batch.visual)
            hole = self.visual.placeholder.unsqueeze(0).to(lat.dtype)
            present = batch.visual_present.unsqueeze(-1).unsqueeze(-1)
            lat = torch.where(present, lat, hole)
            tokens = torch.cat([tabular, lat], dim=1)
        else:
            tokens = tabular
        return tokens + self.pos.unsqueeze(0)

    def forward_predict(self, tokens: torch.Tensor, targets) -> dict[str, HeteroPrediction]:
        h = tokens
        for block in self.blocks:
            h = block(h)
        h = self.final_norm(h)

        preds: dict[str, HeteroPrediction] = {}
        for fid in targets:
            if fid in self._numeric_by_id:
                e = self._numeric_by_id[fid]
                pooled = h[:, e.token_start:e.token_start + e.dim].mean(dim=1)  # (b, d)
                mu = pooled @ self.head_mu_w[e.group][e.row] + self.head_mu_b[e.group][e.row]
                s = pooled @ self.head_s_w[e.group][e.row] + self.head_s_b[e.group][e.row]
                preds[fid] = HeteroPrediction(kind="numeric", mu=mu, s=s)
            elif fid in self._categorical_by_id:
                e = self._categorical_by_id[fid]
                pooled = h[:, e.token]  # (b, d)
                logits = self.cat_logits(pooled)[:, e.vocab_offset:
                                                 e.vocab_offset + len(e.vocabulary)]
                s = pooled @ self.cat_s_w[e.index] + self.cat_s_b[e.index]
                preds[fid] = HeteroPrediction(kind="categorical", logits=logits, s=s)
            else:
                raise ModelError(f"unknown target feature {fid!r}")
        return preds

    def predict(self, batch: Batch, plan: MaskPlan,
                targets=None) -> dict[str, HeteroPrediction]:
        tokens = self.encode_batch(batch, plan)
        if targets is None:
            targets = sorted({fid for row in plan.rows for fid in row})
        return self.forward_predict(tokens, targets)


def loss_masked(predictions: dict[str, HeteroPrediction], batch: Batch,
                plan: MaskPlan, layout: TokenLayout
                ) -> tuple[torch.Tensor, list[TargetTerm]]:
    """Sum of per-target heteroscedastic terms, averaged over batch rows.

    Every masked target must be natively observed, so ground truth is
    read straight from the batch tensors.
    """
    union = sorted({fid for row in plan.rows for fid in row})
    sets = plan.as_sets()
    starts = {}
    acc = 0
    for e in layout.numeric:
        starts[e.feature_id] = acc
        acc += e.dim

    total = batch.numeric.new_zeros(())
    terms: list[TargetTerm] = []
    for fid in union:
        rows = [i for i in range(len(plan)) if fid in sets[i]]
        idx = torch.tensor(rows, dtype=torch.int64)
        pred = predictions.get(fid)
        if pred is None:
            raise ModelError(f"no prediction for masked target {fid!r}")
        if pred.kind == "numeric":
            e = layout.numeric_entry(fid)
            y = batch.numeric[idx][:, starts[fid]:starts[fid] + e.dim]
            mu, s = pred.mu[idx], pred.s[idx]
            het = hetero_numeric_term(y, mu, s)
            total = total + het.sum()
            het = het.detach()
            recon = squared_residual(y, mu).detach()
            sig = sigma_from_s(s).detach()
            for b, i in enumerate(rows):
                terms.append(TargetTerm(
                    sample_id=batch.sample_ids[i], feature_id=fid, kind="numeric",
                    hetero=float(het[b]), recon=float(recon[b]), sigma=float(sig[b])))
        else:
            y = batch.categorical[idx][:, layout.categorical_entry(fid).index]
            logits, s = pred.logits[idx], pred.s[idx]
            het = hetero_categorical_term(logits, y, s)
            total = total + het.sum()
            het = het.detach()
            recon = cross_entropy(logits, y).detach()
            hit = logits.argmax(dim=-1) == y
            sig = sigma_from_s(s).detach()
            for b, i in enumerate(rows):
                terms.append(TargetTerm(
                    sample_id=batch.sample_ids[i], feature_id=fid, kind="categorical",
                    hetero=float(het[b]), recon=float(recon[b]), sigma=float(sig[b]),
                    correct=bool(hit[b])))
    return total / max(len(plan), 1), terms
