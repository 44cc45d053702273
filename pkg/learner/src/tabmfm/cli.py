"""Command-line entry points: train, eval, analyze.

Exit codes: 0 on success, 1 on any reported error, 2 for usage errors
(argparse). All outputs land under the directory named by --out.
"""

from __future__ import annotations

import argparse
import os
import sys

from tabmfm import __version__
from tabmfm.analysis import error_uncertainty_histogram, mcj_matrix
from tabmfm.config import loads_config
from tabmfm.render import (
    count_heatmap_csv,
    render_count_heatmap_svg,
    render_signed_heatmap_svg,
    signed_matrix_csv,
)
from tabmfm.trainer import (
    evaluate_model,
    load_checkpoint,
    train,
    write_metric_log,
    write_terms,
)
from tabmfm.viewio import EVAL, load_view, load_visual_store


class CliError(ValueError):
    pass


def _write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _load_inputs(args):
    view = load_view(args.view)
    visual = load_visual_store(args.visual) if getattr(args, "visual", None) else None
    return view, visual


def _cmd_train(args) -> int:
    try:
        with open(args.config) as fh:
            config = loads_config(fh.read())
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from exc
    view, visual = _load_inputs(args)
    result = train(config, view, out_dir=args.out, visual_store=visual)
    last = result.log[-1]
    print(f"trained {config.epochs} epochs; final {last.split} "
          f"recon_mse={last.recon_mse:.6f} recon_ce={last.recon_ce:.6f} "
          f"top1={last.top1:.4f}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    view, visual = _load_inputs(args)
    model, config, epoch = load_checkpoint(args.ckpt, view)
    row, terms = evaluate_model(model, view, config, args.split, epoch,
                                visual_store=visual)
    print(f"epoch={row.epoch} split={row.split} "
          f"het_numeric={row.het_numeric:.6f} het_categorical={row.het_categorical:.6f} "
          f"recon_mse={row.recon_mse:.6f} recon_ce={row.recon_ce:.6f} "
          f"top1={row.top1:.4f} n_numeric={row.n_numeric} n_categorical={row.n_categorical}")
    if args.dump:
        os.makedirs(os.path.dirname(args.dump) or ".", exist_ok=True)
        write_terms(terms, args.dump)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_metric_log([row], os.path.join(args.out, "eval_metrics.csv"))
    return 0


def _cmd_analyze_hist(args) -> int:
    view, visual = _load_inputs(args)
    model, config, _ = load_checkpoint(args.ckpt, view)
    results = error_uncertainty_histogram(
        model, view, config, split=args.split, trials=args.trials,
        ratio=args.ratio, bins=args.bins, seed=args.seed,
        aggregate=args.aggregate, visual_store=visual)
    for kind, result in results.items():
        counts = result.counts.tolist()
        x_edges = result.x_edges.tolist()
        y_edges = result.y_edges.tolist()
        _write_text(os.path.join(args.out, f"hist_{kind}.csv"),
                    count_heatmap_csv(counts, x_edges, y_edges))
        x_title = "mean |error| (z-space)" if kind == "numeric" else "1 - accuracy"
        _write_text(os.path.join(args.out, f"hist_{kind}.svg"),
                    render_count_heatmap_svg(counts, x_edges, y_edges,
                                             x_title, "mean sigma"))
        lines = ["sample_id,error,sigma,n_targets"]
        lines += [f"{s.sample_id},{s.error!r},{s.sigma!r},{s.n_targets}"
                  for s in result.samples]
        _write_text(os.path.join(args.out, f"hist_{kind}_samples.csv"),
                    "\n".join(lines) + "\n")
        print(f"{kind}: {result.total} samples binned")
    return 0


def _cmd_analyze_mcj(args) -> int:
    view, visual = _load_inputs(args)
    model, config, _ = load_checkpoint(args.ckpt, view)
    targets = [t for t in args.targets.split(",") if t]
    sources = [s for s in args.sources.split(",") if s]
    if not targets or not sources:
        raise CliError("targets and sources must be non-empty comma lists")
    result = mcj_matrix(model, view, config, targets, sources,
                        method=args.method, split=args.split,
                        fd_step=args.fd_step, visual_store=visual)
    matrix = result.matrix.tolist()
    defined = result.defined.tolist()
    _write_text(os.path.join(args.out, "mcj.csv"),
                signed_matrix_csv(result.targets, result.sources, matrix, defined))
    _write_text(os.path.join(args.out, "mcj.svg"),
                render_signed_heatmap_svg(result.targets, result.sources,
                                          matrix, defined))
    counts_lines = ["target," + ",".join(result.sources)]
    counts_lines += [t + "," + ",".join(str(int(c)) for c in row)
                     for t, row in zip(result.targets, result.counts.tolist())]
    _write_text(os.path.join(args.out, "mcj_counts.csv"), "\n".join(counts_lines) + "\n")
    undefined = int((~result.defined).sum())
    print(f"mcj: {len(result.targets)}x{len(result.sources)} entries, "
          f"{undefined} undefined")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabmfm",
        description="Masked-feature pretraining and probes over training views")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="pretrain on a view directory")
    p.add_argument("--view", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--visual", default=None, help="visual block store directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--view", required=True)
    p.add_argument("--split", default=EVAL)
    p.add_argument("--visual", default=None)
    p.add_argument("--dump", default=None, help="write per-target terms CSV here")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("analyze", help="probes over a trained checkpoint")
    asub = p.add_subparsers(dest="probe", required=True)

    h = asub.add_parser("hist", help="error vs predicted uncertainty histogram")
    h.add_argument("--ckpt", required=True)
    h.add_argument("--view", required=True)
    h.add_argument("--out", required=True)
    h.add_argument("--split", default=EVAL)
    h.add_argument("--trials", type=int, default=100)
    h.add_argument("--ratio", type=float, default=0.15)
    h.add_argument("--bins", type=int, default=16)
    h.add_argument("--seed", type=int, default=None)
    h.add_argument("--aggregate", choices=("mean", "median"), default="mean")
    h.add_argument("--visual", default=None)
    h.set_defaults(func=_cmd_analyze_hist)

    m = asub.add_parser("mcj", help="masked-prediction sensitivity matrix")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--view", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--targets", required=True, help="comma-separated numeric feature ids")
    m.add_argument("--sources", required=True, help="comma-separated numeric feature ids")
    m.add_argument("--method", choices=("auto", "fd"), default="auto")
    m.add_argument("--fd-step", type=float, default=1e-3)
    m.add_argument("--split", default=EVAL)
    m.add_argument("--visual", default=None)
    m.set_defaults(func=_cmd_analyze_mcj)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
