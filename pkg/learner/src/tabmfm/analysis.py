"""Probes over a trained model: error-vs-uncertainty, and sensitivities.

The histogram probe repeats random masking trials and aggregates, per
sample, reconstruction error against predicted sigma: numeric error is
the mean absolute error in z-space, categorical error is 1 - accuracy.
The sensitivity probe masks one numeric target at a time and measures
the gradient of its predicted mean with respect to every observed
source value (z-space), averaged over samples; the diagonal is zero by
construction because a masked target enters the encoder only as its
missing embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from tabmfm.config import ModelConfig
from tabmfm.masking import MaskPlan, derive_rng, observed_feature_matrix, plan_for_rows
from tabmfm.model import MaskedFeatureModel, make_batch
from tabmfm.viewio import EVAL, View, VisualStore


class AnalysisError(ValueError):
    pass


@dataclass
class SampleAggregate:
    sample_id: str
    error: float
    sigma: float
    n_targets: int


@dataclass
class HistogramResult:
    """2-D counts over (aggregated error, aggregated sigma)."""

    kind: str
    x_edges: np.ndarray  # error axis, len bins+1, monotone
    y_edges: np.ndarray  # sigma axis
    counts: np.ndarray  # (bins, bins) ints; [i, j] = x bin i, y bin j
    samples: list[SampleAggregate]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _aggregate(values: list[float], how: str) -> float:
    if how == "mean":
        return float(np.mean(values))
    if how == "median":
        return float(np.median(values))
    raise AnalysisError(f"unknown aggregate {how!r}")


def error_uncertainty_histogram(
        model: MaskedFeatureModel, view: View, config: ModelConfig,
        split: str = EVAL, trials: int = 100, ratio: float = 0.15,
        bins: int = 16, seed: int | None = None, aggregate: str = "mean",
        visual_store: VisualStore | None = None
        ) -> dict[str, HistogramResult]:
    """Returns the numeric and categorical variants keyed by kind.

    A sample lands in a variant only if at least one target of that
    kind was masked for it across the trials; each variant's counts sum
    to exactly its number of aggregated samples.
    """
    if trials < 1:
        raise AnalysisError("trials must be >= 1")
    if not 0.0 < ratio < 1.0:
        raise AnalysisError("ratio must be in (0, 1)")
    if seed is None:
        seed = config.seed
    layout = model.layout
    indices = view.split_indices(split)
    starts = {}
    acc = 0
    for e in layout.numeric:
        starts[e.feature_id] = acc
        acc += e.dim

    num_err: dict[str, list[float]] = {}
    num_sig: dict[str, list[float]] = {}
    cat_hits: dict[str, list[float]] = {}
    cat_sig: dict[str, list[float]] = {}

    model.eval()
    with torch.no_grad():
        for trial in range(trials):
            rng = derive_rng(seed, "hist", trial)
            for start in range(0, len(indices), config.batch_size):
                rows = indices[start:start + config.batch_size]
                plan = plan_for_rows(view, layout, rows, ratio, rng,
                                     mode=config.mask_mode)
                batch = make_batch(view, layout, rows, model.dtype,
                                   visual_store=visual_store, config=config)
                preds = model.predict(batch, plan)
                sets = plan.as_sets()
                for fid, pred in preds.items():
                    hit_rows = [i for i in range(len(plan)) if fid in sets[i]]
                    idx = torch.tensor(hit_rows, dtype=torch.int64)
                    sig = pred.sigma[idx]
                    if pred.kind == "numeric":
                        e = layout.numeric_entry(fid)
                        y = batch.numeric[idx][:, starts[fid]:starts[fid] + e.dim]
                        ae = (y - pred.mu[idx]).abs().mean(dim=-1)
                        for b, i in enumerate(hit_rows):
                            sid = batch.sample_ids[i]
                            num_err.setdefault(sid, []).append(float(ae[b]))
                            num_sig.setdefault(sid, []).append(float(sig[b]))
                    else:
                        col = layout.categorical_entry(fid).index
                        y = batch.categorical[idx][:, col]
                        hit = pred.logits[idx].argmax(dim=-1) == y
                        for b, i in enumerate(hit_rows):
                            sid = batch.sample_ids[i]
                            cat_hits.setdefault(sid, []).append(1.0 if hit[b] else 0.0)
                            cat_sig.setdefault(sid, []).append(float(sig[b]))

    out: dict[str, HistogramResult] = {}
    numeric_samples = [
        SampleAggregate(sample_id=sid, error=_aggregate(errs, aggregate),
                        sigma=_aggregate(num_sig[sid], aggregate), n_targets=len(errs))
        for sid, errs in num_err.items()]
    categorical_samples = [
        SampleAggregate(sample_id=sid, error=1.0 - sum(hits) / len(hits),
                        sigma=_aggregate(cat_sig[sid], aggregate), n_targets=len(hits))
        for sid, hits in cat_hits.items()]
    out["numeric"] = _bin_samples("numeric", numeric_samples, bins)
    out["categorical"] = _bin_samples("categorical", categorical_samples, bins)
    return out


def _bin_samples(kind: str, samples: list[SampleAggregate], bins: int) -> HistogramResult:
    if samples:
        x = np.asarray([s.error for s in samples])
        y = np.asarray([s.sigma for s in samples])
        counts, x_edges, y_edges = np.histogram2d(x, y, bins=bins)
    else:
        counts = np.zeros((bins, bins))
        x_edges = np.linspace(0.0, 1.0, bins + 1)
        y_edges = np.linspace(0.0, 1.0, bins + 1)
    return HistogramResult(kind=kind, x_edges=x_edges, y_edges=y_edges,
                           counts=counts.astype(np.int64), samples=samples)


@dataclass
class MCJResult:
    """targets x sources matrix of sample-averaged z-space gradients.

    ``defined`` is False where no sample had both the target and the
    source observed; those matrix entries hold 0.0 and are flagged, not
    averaged in. The matrix is generally asymmetric.
    """

    targets: list[str]
    sources: list[str]
    matrix: np.ndarray  # (t, s) float
    defined: np.ndarray  # (t, s) bool
    counts: np.ndarray  # (t, s) int

    def entry(self, target: str, source: str) -> float:
        return float(self.matrix[self.targets.index(target), self.sources.index(source)])


def _target_mean(model: MaskedFeatureModel, batch, plan: MaskPlan, fid: str) -> torch.Tensor:
    """Per-sample mean over the target's dims of predicted mu, (b,)."""
    preds = model.predict(batch, plan, targets=[fid])
    return preds[fid].mu.mean(dim=-1)


def mcj_matrix(model: MaskedFeatureModel, view: View, config: ModelConfig,
               targets: list[str], sources: list[str], method: str = "auto",
               split: str = EVAL, fd_step: float = 1e-3,
               visual_store: VisualStore | None = None) -> MCJResult:
    if method not in ("auto", "fd"):
        raise AnalysisError(f"unknown method {method!r}")
    layout = model.layout
    for fid in (*targets, *sources):
        try:
            layout.numeric_entry(fid)
        except ValueError:
            raise AnalysisError(f"{fid!r} is not a kept numeric feature") from None
    starts = {}
    acc = 0
    for e in layout.numeric:
        starts[e.feature_id] = acc
        acc += e.dim

    observed = observed_feature_matrix(view, layout)
    indices = view.split_indices(split)
    t_count, s_count = len(targets), len(sources)
    grad_sum = np.zeros((t_count, s_count))
    grad_n = np.zeros((t_count, s_count), dtype=np.int64)

    model.eval()
    for ti, t in enumerate(targets):
        t_feat = layout.numeric_entry(t).feature_index
        rows = [int(i) for i in indices if observed[i, t_feat] == 1]
        for start in range(0, len(rows), config.batch_size):
            chunk = rows[start:start + config.batch_size]
            plan = MaskPlan(rows=tuple((t,) for _ in chunk))
            batch = make_batch(view, layout, chunk, model.dtype,
                               visual_store=visual_store, config=config)
            src_obs = {s: observed[chunk, layout.numeric_entry(s).feature_index] == 1
                       for s in sources}
            if method == "auto":
                batch.numeric.requires_grad_(True)
                obj = _target_mean(model, batch, plan, t)
                grad, = torch.autograd.grad(obj.sum(), batch.numeric)
                grad = grad.detach().numpy()
                for si, s in enumerate(sources):
                    if s == t:
                        continue
                    c0, width = starts[s], layout.numeric_entry(s).dim
                    per_sample = grad[:, c0:c0 + width].mean(axis=1)
                    keep = src_obs[s]
                    grad_sum[ti, si] += float(per_sample[keep].sum())
                    grad_n[ti, si] += int(keep.sum())
            else:
                with torch.no_grad():
                    for si, s in enumerate(sources):
                        if s == t:
                            continue
                        c0, width = starts[s], layout.numeric_entry(s).dim
                        dims = []
                        for j in range(width):
                            for sign in (1.0, -1.0):
                                shifted = batch.numeric.clone()
                                shifted[:, c0 + j] += sign * fd_step
                                bumped = _rebuilt(batch, shifted)
                                val = _target_mean(model, bumped, plan, t)
                                dims.append(sign * val)
                        per_dim = [(dims[2 * j] + dims[2 * j + 1]) / (2 * fd_step)
                                   for j in range(width)]
                        per_sample = torch.stack(per_dim, dim=0).mean(dim=0).numpy()
                        keep = src_obs[s]
                        grad_sum[ti, si] += float(per_sample[keep].sum())
                        grad_n[ti, si] += int(keep.sum())

    matrix = np.zeros((t_count, s_count))
    defined = grad_n > 0
    matrix[defined] = grad_sum[defined] / grad_n[defined]
    # diagonal: the masked target's own value never enters the encoder
    for ti, t in enumerate(targets):
        if t in sources:
            si = sources.index(t)
            t_feat = layout.numeric_entry(t).feature_index
            has_rows = any(observed[int(i), t_feat] == 1 for i in indices)
            matrix[ti, si] = 0.0
            defined[ti, si] = has_rows
            grad_n[ti, si] = sum(int(observed[int(i), t_feat] == 1) for i in indices)
    return MCJResult(targets=list(targets), sources=list(sources),
                     matrix=matrix, defined=defined, counts=grad_n)


def _rebuilt(batch, numeric: torch.Tensor):
    return replace(batch, numeric=numeric)
