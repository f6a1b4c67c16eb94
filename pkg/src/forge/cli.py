"""Command-line entry point: ``forge <subcommand> [flags]``.

Exit status is 0 on success, 1 when processing fails and 2 on usage errors.
Logs go to stderr (level from ``FORGE_LOG``: error, warn, info, debug);
``--json`` writes machine-readable results to stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .blend import BlendConfig, ConvergenceError, descend, poisson_blend, total_objective
from .compositor import AttackSpec, apply_attack, compose, refine
from .dataset import ManifestError, load_eval_pair, parse_eval_manifest, parse_manifest, run_pipeline
from .image import ImageFormatError, load_image, load_mask, save_image, save_mask
from .metrics import sweep_thresholds
from .morphology import DEFAULT_EDGE_RADIUS, DEFAULT_MIN_AREA, DEFAULT_POST_DILATE, edge_mask, \
    remove_small_components

log = logging.getLogger("forge")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
MODE_NAMES = {"per-image": "per_image_threshold", "global": "global_threshold"}


class UsageError(Exception):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


def _byte(text):
    value = int(text)
    if not 0 <= value <= 255:
        raise argparse.ArgumentTypeError(f"expected 0..255, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forge", description="Synthesize manipulated-image training data and score manipulation masks.")
    parser.add_argument("--version", action="version", version=f"forge {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--json", action="store_true", help="write results to stdout as JSON")
        p.set_defaults(subparser=p)
        return p

    p = add("compose", "paste the masked source region onto the target")
    p.add_argument("--source", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--edge-out", help="also write the edge mask here")
    p.add_argument("--radius", type=_positive_int, default=DEFAULT_EDGE_RADIUS, help="edge-mask radius")
    p.add_argument("--mask-threshold", type=_byte, default=128)

    p = add("blend", "Poisson or variational blending of the masked source into the target")
    p.add_argument("--mode", choices=("poisson", "variational"), default="poisson")
    p.add_argument("--source", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda-grad", type=float, default=1.0)
    p.add_argument("--lambda-edge", type=float, default=2.0)
    p.add_argument("--tol", type=float, default=1e-6, help="solver tolerance")
    p.add_argument("--max-iters", type=_positive_int, default=None)
    p.add_argument("--step-size", type=float, default=0.5, help="variational step size per sample")
    p.add_argument("--radius", type=_positive_int, default=DEFAULT_EDGE_RADIUS, help="edge-mask radius")
    p.add_argument("--mask-threshold", type=_byte, default=128)

    p = add("refine", "replace boundary pixels with the target and shrink the mask")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--target", required=True)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--boundary", help="predicted boundary mask file")
    which.add_argument("--ground-truth-edge", action="store_true",
                       help="use the edge mask of --mask as the boundary")
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out")
    p.add_argument("--radius", type=_positive_int, default=DEFAULT_EDGE_RADIUS, help="edge-mask radius")
    p.add_argument("--mask-threshold", type=_byte, default=128)

    p = add("attack", "JPEG-quantization or down-scaling attack")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", help="mask to carry through a scale attack")
    p.add_argument("--kind", choices=("jpeg", "scale"), required=True)
    p.add_argument("--quality", type=int, help="JPEG quality 1..100")
    p.add_argument("--ratio", type=float, help="scale ratio in (0, 1]")
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out")
    p.add_argument("--mask-threshold", type=_byte, default=128)

    p = add("edge-mask", "boundary band of a mask (dilation minus erosion)")
    p.add_argument("--mask", required=True)
    p.add_argument("--radius", type=_positive_int, default=DEFAULT_EDGE_RADIUS)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-threshold", type=_byte, default=128)

    p = add("postprocess", "remove small connected components from a predicted mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--min-area", type=int, default=DEFAULT_MIN_AREA)
    p.add_argument("--dilate-radius", type=_positive_int, default=DEFAULT_POST_DILATE)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-threshold", type=_byte, default=128)

    p = add("eval", "pixel F1/MCC at the optimal threshold over a manifest of prediction pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--metric", choices=("f1", "mcc"), default="f1")
    p.add_argument("--mode", choices=tuple(MODE_NAMES), default="per-image")
    p.add_argument("--mask-threshold", type=_byte, default=128)

    p = add("pipeline", "run a synthesis manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--jobs", type=_positive_int, default=os.cpu_count() or 1,
                   help="worker processes (default: all cores)")
    return parser


def _emit(args, payload):
    if args.json:
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")


def _blend_config(args) -> BlendConfig:
    try:
        return BlendConfig(lambda_grad=args.lambda_grad, lambda_edge=args.lambda_edge,
                           solver_tol=args.tol, max_iters=args.max_iters,
                           step_size=args.step_size, edge_radius=args.radius)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_compose(args):
    sample = compose(load_image(args.source), load_mask(args.mask, args.mask_threshold),
                     load_image(args.target), args.radius)
    save_image(sample.image, args.out)
    if args.edge_out:
        save_mask(sample.edge, args.edge_out)
    _emit(args, {"out": args.out, "manipulated_pixels": int(sample.mask.sum())})
    return 0


def cmd_blend(args):
    cfg = _blend_config(args)
    source, target = load_image(args.source), load_image(args.target)
    mask = load_mask(args.mask, args.mask_threshold)
    if args.mode == "poisson":
        image = poisson_blend(source, mask, target, cfg)
        losses = total_objective(image, source, target, mask, edge_mask(mask, cfg.edge_radius), cfg)
    else:
        result = descend(source, mask, target, cfg)
        image, losses = result.image, result.losses
        log.info("variational blend: %d iterations, objective %.6f -> %.6f",
                 result.iterations, result.initial_losses.total, losses.total)
    save_image(image, args.out)
    _emit(args, losses.to_dict())
    return 0


def cmd_refine(args):
    mask = load_mask(args.mask, args.mask_threshold)
    if args.ground_truth_edge:
        boundary = edge_mask(mask, args.radius)
    else:
        boundary = load_mask(args.boundary, args.mask_threshold)
    sample = refine(load_image(args.image), mask, load_image(args.target), boundary, args.radius)
    save_image(sample.image, args.out)
    if args.mask_out:
        save_mask(sample.mask, args.mask_out)
    _emit(args, {"out": args.out, "manipulated_pixels": int(sample.mask.sum())})
    return 0


def _attack_spec(args) -> AttackSpec:
    if args.kind == "jpeg" and args.ratio is not None:
        raise UsageError("--ratio does not apply to a jpeg attack")
    if args.kind == "scale" and args.quality is not None:
        raise UsageError("--quality does not apply to a scale attack")
    if args.mask_out and not args.mask:
        raise UsageError("--mask-out requires --mask")
    try:
        return AttackSpec(kind=args.kind, quality=args.quality, ratio=args.ratio)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_attack(args):
    spec = _attack_spec(args)
    image = load_image(args.image)
    if args.mask:
        mask = load_mask(args.mask, args.mask_threshold)
    else:
        mask = np.zeros(image.shape[:2], dtype=bool)
    image, mask = apply_attack(image, mask, spec)
    save_image(image, args.out)
    if args.mask_out:
        save_mask(mask, args.mask_out)
    _emit(args, {"out": args.out, "attack": spec.to_dict(), "height": image.shape[0], "width": image.shape[1]})
    return 0


def cmd_edge_mask(args):
    edge = edge_mask(load_mask(args.mask, args.mask_threshold), args.radius)
    save_mask(edge, args.out)
    _emit(args, {"out": args.out, "edge_pixels": int(edge.sum())})
    return 0


def cmd_postprocess(args):
    if args.min_area < 0:
        raise UsageError("--min-area must be non-negative")
    cleaned = remove_small_components(load_mask(args.mask, args.mask_threshold),
                                      args.min_area, args.dilate_radius)
    save_mask(cleaned, args.out)
    _emit(args, {"out": args.out, "foreground_pixels": int(cleaned.sum())})
    return 0


def cmd_eval(args):
    pairs = parse_eval_manifest(args.manifest)
    if not pairs:
        raise ManifestError(f"{args.manifest}: no prediction pairs")
    preds, gts = [], []
    for pair in pairs:
        pred, gt = load_eval_pair(pair, args.mask_threshold)
        preds.append(pred)
        gts.append(gt)
    report = sweep_thresholds(preds, gts, MODE_NAMES[args.mode], args.metric, ids=[p.id for p in pairs])
    log.info("dataset F1 %.6f, MCC %.6f (%s)", report.dataset_f1, report.dataset_mcc, report.mode)
    _emit(args, report.to_dict())
    return 0


def cmd_pipeline(args):
    entries = parse_manifest(args.manifest)
    records = run_pipeline(entries, jobs=args.jobs)
    failed = [r["id"] for r in records if r["status"] != "ok"]
    for r in records:
        if r["status"] != "ok":
            print(f"forge pipeline: {r['id']}: {r['error']}", file=sys.stderr)
    log.info("pipeline: %d entries, %d failed", len(records), len(failed))
    _emit(args, {"entries": len(records), "failed": failed,
                 "records": [{"id": r["id"], "status": r["status"], "error": r["error"]} for r in records]})
    return 1 if failed else 0


COMMANDS = {
    "compose": cmd_compose,
    "blend": cmd_blend,
    "refine": cmd_refine,
    "attack": cmd_attack,
    "edge-mask": cmd_edge_mask,
    "postprocess": cmd_postprocess,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def _configure_logging():
    level_name = os.environ.get("FORGE_LOG", "warn").lower()
    level = LOG_LEVELS.get(level_name, logging.WARNING)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("forge: %(levelname)s: %(message)s"))
    root = logging.getLogger("forge")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False
    if level_name not in LOG_LEVELS:
        log.warning("ignoring unknown FORGE_LOG=%r", level_name)


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        args.subparser.print_usage(sys.stderr)
        print(f"forge {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, ImageFormatError, ConvergenceError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
