"""Masked-feature pretraining loop, evaluation, and checkpoint files.

Runs are reproducible from the config seed alone: batch order, per-batch
mask plans, and per-epoch eval masks all come from tagged hash-derived
streams. The train metric row aggregates the terms actually optimized
that epoch; the eval row is a separate fixed-parameter pass with the
split's own mask stream.

Checkpoint format (versioned): a single file holding format_version,
the config document, the layout digest, the epoch, and the parameter
state dict. Loading refuses a view whose layout digest differs.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import torch

from tabmfm.config import ModelConfig, config_from_doc, config_to_doc
from tabmfm.layout import TokenLayout, build_token_layout, layout_digest
from tabmfm.masking import derive_rng, plan_for_rows
from tabmfm.model import MaskedFeatureModel, TargetTerm, loss_masked, make_batch
from tabmfm.viewio import EVAL, TRAIN, View, VisualStore

CHECKPOINT_FORMAT_VERSION = 1
FINAL_CHECKPOINT = "checkpoint_final.pt"
METRICS_FILE = "metrics.csv"
FINAL_EVAL_TERMS_FILE = "targets_final_eval.csv"


class TrainerError(ValueError):
    pass


@dataclass(frozen=True)
class MetricRow:
    """One (epoch, split) line of the metric log.

    ``het_*`` are the optimized objective terms; ``recon_*`` the
    underlying squared error / cross-entropy; ``top1`` the masked
    categorical accuracy. Kinds with no targets report 0.0 and expose
    that through the count columns.
    """

    epoch: int
    split: str
    het_numeric: float
    het_categorical: float
    recon_mse: float
    recon_ce: float
    top1: float
    n_numeric: int
    n_categorical: int


def metrics_from_terms(epoch: int, split: str, terms: list[TargetTerm]) -> MetricRow:
    num = [t for t in terms if t.kind == "numeric"]
    cat = [t for t in terms if t.kind == "categorical"]

    def mean(values):
        return sum(values) / len(values) if values else 0.0

    row = MetricRow(
        epoch=epoch,
        split=split,
        het_numeric=mean([t.hetero for t in num]),
        het_categorical=mean([t.hetero for t in cat]),
        recon_mse=mean([t.recon for t in num]),
        recon_ce=mean([t.recon for t in cat]),
        top1=mean([1.0 if t.correct else 0.0 for t in cat]),
        n_numeric=len(num),
        n_categorical=len(cat),
    )
    for name in ("het_numeric", "het_categorical", "recon_mse", "recon_ce", "top1"):
        if not math.isfinite(getattr(row, name)):
            raise TrainerError(f"non-finite metric {name} at epoch {epoch} ({split})")
    return row


def _batch_starts(n: int, batch_size: int) -> list[int]:
    return list(range(0, n, batch_size))


def evaluate_model(model: MaskedFeatureModel, view: View, config: ModelConfig,
                   split: str, epoch: int,
                   visual_store: VisualStore | None = None
                   ) -> tuple[MetricRow, list[TargetTerm]]:
    """Fixed-parameter pass over a split with its seeded mask stream."""
    indices = view.split_indices(split)
    rng = derive_rng(config.seed, "mask", split, epoch)
    terms: list[TargetTerm] = []
    model.eval()
    with torch.no_grad():
        for start in _batch_starts(len(indices), config.batch_size):
            rows = indices[start:start + config.batch_size]
            plan = plan_for_rows(view, model.layout, rows, config.mask_ratio, rng,
                                 mode=config.mask_mode)
            batch = make_batch(view, model.layout, rows, model.dtype,
                               visual_store=visual_store, config=config)
            preds = model.predict(batch, plan)
            _, batch_terms = loss_masked(preds, batch, plan, model.layout)
            terms.extend(batch_terms)
    return metrics_from_terms(epoch, split, terms), terms


@dataclass
class TrainResult:
    model: MaskedFeatureModel
    layout: TokenLayout
    log: list[MetricRow]
    checkpoint_path: str | None


def train(config: ModelConfig, view: View, out_dir: str | None = None,
          visual_store: VisualStore | None = None) -> TrainResult:
    torch.manual_seed(config.seed)
    layout = build_token_layout(view.features, config)
    model = MaskedFeatureModel(config, layout)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    train_indices = view.split_indices(TRAIN)
    log: list[MetricRow] = []
    final_eval_terms: list[TargetTerm] = []

    if config.epochs == 0:
        row, final_eval_terms = evaluate_model(model, view, config, EVAL, 0,
                                               visual_store=visual_store)
        log.append(row)

    for epoch in range(1, config.epochs + 1):
        order = [int(i) for i in train_indices]
        derive_rng(config.seed, "shuffle", epoch).shuffle(order)
        mask_rng = derive_rng(config.seed, "mask", TRAIN, epoch)
        epoch_terms: list[TargetTerm] = []
        model.train()
        for batch_index, start in enumerate(_batch_starts(len(order), config.batch_size)):
            rows = order[start:start + config.batch_size]
            plan = plan_for_rows(view, layout, rows, config.mask_ratio, mask_rng,
                                 mode=config.mask_mode)
            batch = make_batch(view, layout, rows, model.dtype,
                               visual_store=visual_store, config=config)
            preds = model.predict(batch, plan)
            total, batch_terms = loss_masked(preds, batch, plan, layout)
            if not torch.isfinite(total):
                raise TrainerError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index} "
                    f"(first sample {batch.sample_ids[0]!r})")
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            epoch_terms.extend(batch_terms)

        log.append(metrics_from_terms(epoch, TRAIN, epoch_terms))
        eval_row, final_eval_terms = evaluate_model(model, view, config, EVAL, epoch,
                                                    visual_store=visual_store)
        log.append(eval_row)

        if (out_dir is not None and config.checkpoint_every > 0
                and epoch % config.checkpoint_every == 0 and epoch != config.epochs):
            save_checkpoint(model, config, epoch,
                            os.path.join(out_dir, f"checkpoint_epoch{epoch:04d}.pt"))

    checkpoint_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint_path = os.path.join(out_dir, FINAL_CHECKPOINT)
        save_checkpoint(model, config, config.epochs, checkpoint_path)
        write_metric_log(log, os.path.join(out_dir, METRICS_FILE))
        write_terms(final_eval_terms, os.path.join(out_dir, FINAL_EVAL_TERMS_FILE))
    return TrainResult(model=model, layout=layout, log=log, checkpoint_path=checkpoint_path)


def save_checkpoint(model: MaskedFeatureModel, config: ModelConfig, epoch: int,
                    path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    torch.save({
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config_to_doc(config),
        "layout_digest": layout_digest(model.layout),
        "epoch": epoch,
        "state_dict": model.state_dict(),
    }, path)


def load_checkpoint(path: str, view: View
                    ) -> tuple[MaskedFeatureModel, ModelConfig, int]:
    """Rebuild the model against ``view``; refuses a layout mismatch."""
    try:
        doc = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise TrainerError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise TrainerError(f"unsupported checkpoint format_version "
                           f"{doc.get('format_version')!r}")
    config = config_from_doc(doc["config"])
    layout = build_token_layout(view.features, config)
    if layout_digest(layout) != doc["layout_digest"]:
        raise TrainerError(
            "checkpoint layout digest does not match this view's feature manifest")
    model = MaskedFeatureModel(config, layout)
    model.load_state_dict(doc["state_dict"])
    return model, config, int(doc["epoch"])


def write_metric_log(log: list[MetricRow], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "split", "het_numeric", "het_categorical",
                         "recon_mse", "recon_ce", "top1", "n_numeric", "n_categorical"])
        for r in log:
            writer.writerow([r.epoch, r.split, repr(r.het_numeric), repr(r.het_categorical),
                             repr(r.recon_mse), repr(r.recon_ce), repr(r.top1),
                             r.n_numeric, r.n_categorical])


def read_metric_log(path: str) -> list[MetricRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [MetricRow(
            epoch=int(r["epoch"]), split=r["split"],
            het_numeric=float(r["het_numeric"]),
            het_categorical=float(r["het_categorical"]),
            recon_mse=float(r["recon_mse"]), recon_ce=float(r["recon_ce"]),
            top1=float(r["top1"]), n_numeric=int(r["n_numeric"]),
            n_categorical=int(r["n_categorical"])) for r in reader]


def write_terms(terms: list[TargetTerm], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "feature_id", "kind", "hetero", "recon",
                         "sigma", "correct"])
        for t in terms:
            writer.writerow([t.sample_id, t.feature_id, t.kind, repr(t.hetero),
                             repr(t.recon), repr(t.sigma),
                             "" if t.correct is None else int(t.correct)])


def read_terms(path: str) -> list[TargetTerm]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [TargetTerm(
            sample_id=r["sample_id"], feature_id=r["feature_id"], kind=r["kind"],
            hetero=float(r["hetero"]), recon=float(r["recon"]), sigma=float(r["sigma"]),
            correct=None if r["correct"] == "" else bool(int(r["correct"])))
            for r in reader]
