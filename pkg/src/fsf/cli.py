"""Command-line surface: optimize, rasterize, reconstruct, eval, bench.

Exit codes: 0 success, 2 invalid input, 3 numerical abort. Identical
invocations (including --seed and FSF_THREADS) produce byte-identical
outputs, and every JSON report echoes the full effective configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import imgio
from .engine import (
    AttackConfig,
    NumericalAbortError,
    config_from_dict,
    config_to_dict,
    evaluate_asr,
    optimize,
)
from .estimator import FourierShapeReconstructor, make_objective
from .parallel import thread_count
from .placement import check_image, load_boxes
from .raster import GridSpec, rasterize, rasterize_backward
from .shapes import (
    CurveSampling,
    FourierCoefficients,
    InvalidInputError,
    eval_curve,
    init_coefficients,
    load_theta,
    save_theta,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3

_CONFIG_FLAGS = [
    ("--k", int, "highest Fourier harmonic K"),
    ("--grid", int, "mask grid size (square)"),
    ("--samples", int, "curve samples N_s"),
    ("--rho", float, "patch size relative to the target box"),
    ("--gray", float, "patch gray value in [0, 1]"),
    ("--alpha", float, "area loss weight"),
    ("--beta", float, "regularization loss weight"),
    ("--gamma", float, "harmonic amplitude fraction"),
    ("--learning-rate", float, "Adam learning rate"),
    ("--max-iters", int, "iteration cap"),
    ("--early-stop-threshold", float, "score threshold for early stopping"),
    ("--early-stop-patience", int, "consecutive low-score iterations to stop"),
    ("--schedule-trigger", float, "score that triggers the one-shot LR decay"),
    ("--schedule-factor", float, "LR multiplier when the schedule fires"),
    ("--association-iou", float, "proposal-target association IoU"),
    ("--seed", int, "RNG seed"),
    ("--threads", int, "worker threads (0 = auto, overrides FSF_THREADS)"),
]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for flag, typ, help_ in _CONFIG_FLAGS:
        p.add_argument(flag, type=typ, default=None, help=help_)
    p.add_argument("--augment", action="store_true", default=None,
                   help="enable placement augmentation during optimization")


def _build_config(args) -> AttackConfig:
    merged: dict = {}
    if getattr(args, "config", None):
        merged.update(json.loads(Path(args.config).read_text()))
    for key in ("k", "grid", "samples", "rho", "gray", "alpha", "beta", "gamma",
                "learning_rate", "max_iters", "early_stop_threshold",
                "early_stop_patience", "schedule_trigger", "schedule_factor",
                "association_iou", "seed", "threads", "augment"):
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return config_from_dict(merged)


def _load_image(path) -> np.ndarray:
    return check_image(imgio.read_pgm(path), name=str(path))


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_trace_csv(path, trace) -> None:
    lines = ["iter,total,adv,area,reg,max_score,lr"]
    for rec in trace:
        b = rec.breakdown
        lines.append(",".join([
            str(rec.iteration), repr(b.total), repr(b.adv), repr(b.area),
            repr(b.reg), repr(b.max_associated_score), repr(rec.lr),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def _asr_table(image, targets, theta, objective, config,
               thresholds=(0.1, 0.3, 0.5, 0.7, 0.9)) -> dict:
    report = evaluate_asr([(image, targets, theta)], objective,
                          list(thresholds), config)
    return report


def cmd_optimize(args) -> int:
    config = _build_config(args)
    image = _load_image(args.image)
    targets = load_boxes(args.boxes)
    reference = None
    if args.objective == "mask_match":
        if not args.target_mask:
            raise InvalidInputError("--objective mask_match requires --target-mask")
        reference = imgio.read_pgm(args.target_mask)
    objective = make_objective(args.objective, targets=targets,
                               reference_mask=reference)

    result = optimize(image, targets, objective, config)
    mask = rasterize(result.theta, config.grid, config.sampling, config.threads)

    save_theta(args.out_shape, result.theta)
    imgio.write_pgm(args.out_mask, mask)
    _write_trace_csv(args.trace, result.trace)

    final = result.final
    report = {
        "config": config_to_dict(config),
        "objective": args.objective,
        "iterations": result.iterations,
        "stop_reason": result.stop_reason,
        "final_losses": {
            "total": final.total, "adv": final.adv, "area": final.area,
            "reg": final.reg, "max_associated_score": final.max_associated_score,
        },
        "asr": None if args.objective == "mask_match"
        else _asr_table(image, targets, result.theta, objective, config),
    }
    _write_json(args.report, report)
    return EXIT_OK


def cmd_rasterize(args) -> int:
    theta = load_theta(args.shape)
    grid = GridSpec(args.grid, args.grid_w or args.grid)
    sampling = CurveSampling(args.samples)
    mask = rasterize(theta, grid, sampling, args.threads)
    imgio.write_pgm(args.out, mask)
    if args.raw:
        imgio.write_float_raw(args.raw, mask)
    if args.svg:
        Path(args.svg).write_text(imgio.curve_svg(eval_curve(theta, sampling)))
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    target = imgio.read_pgm(args.target)
    rec = FourierShapeReconstructor(
        K=args.k, curve_samples=args.samples, learning_rate=args.learning_rate,
        max_iters=args.iters, seed=args.seed or 0, threads=args.threads,
    ).fit(target)
    save_theta(args.out, rec.theta_)
    final = rec.trace_[-1].breakdown
    report = {
        "config": config_to_dict(rec.config_),
        "objective": "mask_match",
        "iterations": len(rec.trace_),
        "final_mse": final.adv,
        "final_iou": rec.score(),
    }
    _write_json(args.report, report)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _build_config(args)
    image = _load_image(args.image)
    targets = load_boxes(args.boxes)
    theta = load_theta(args.shape)
    objective = make_objective(args.objective, targets=targets)
    thresholds = [float(t) for t in args.thresholds.split(",") if t.strip()]
    report = evaluate_asr([(image, targets, theta)], objective, thresholds, config)
    report["config"] = config_to_dict(config)
    report["objective"] = args.objective
    _write_json(args.out, report)
    if args.svg_curve:
        Path(args.svg_curve).write_text(
            imgio.asr_curve_svg(report["thresholds"], report["asr"])
        )
    return EXIT_OK


def _bench_once(theta, grid, sampling, mask_grad, threads):
    t0 = time.perf_counter()
    rasterize(theta, grid, sampling, threads)
    t1 = time.perf_counter()
    rasterize_backward(theta, grid, sampling, mask_grad, threads=threads)
    t2 = time.perf_counter()
    return t1 - t0, (t2 - t1) + (t1 - t0)


def cmd_bench(args) -> int:
    grid = GridSpec(args.grid, args.grid)
    sampling = CurveSampling(args.samples)
    theta = init_coefficients((0.0, 0.0, 1.0, 1.0), args.k, seed=0)
    mask_grad = np.ones((grid.h, grid.w))

    def run(threads):
        fwd, both = [], []
        for _ in range(args.repeats):
            f, b = _bench_once(theta, grid, sampling, mask_grad, threads)
            fwd.append(f)
            both.append(b)
        return fwd, both

    fwd1, both = run(1)
    fwd_n, _ = run(thread_count())
    fwd = fwd1  # headline numbers are the single-thread medians
    multi_mask = rasterize(theta, grid, sampling, thread_count())
    single_mask = rasterize(theta, grid, sampling, 1)
    pix_samples = grid.h * grid.w * sampling.n_samples

    def stats(xs):
        xs = sorted(xs)
        return {
            "median_s": xs[len(xs) // 2],
            "p95_s": xs[min(len(xs) - 1, int(np.ceil(0.95 * len(xs))) - 1)],
        }

    report = {
        "grid": args.grid,
        "samples": args.samples,
        "k": args.k,
        "repeats": args.repeats,
        "forward": stats(fwd) | {
            "throughput_pixel_samples_per_s": pix_samples / np.median(fwd)},
        "forward_backward": stats(both),
        "single_thread_forward_median_s": float(np.median(fwd1)),
        "multi_thread_forward_median_s": float(np.median(fwd_n)),
        "multi_thread_speedup": float(np.median(fwd1) / np.median(fwd_n)),
        "threads": thread_count(),
        "bitwise_identical_across_threads": bool(
            np.array_equal(multi_mask, single_mask)),
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsf",
        description="Fourier shape rasterization and shape-patch attack toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="optimize an adversarial patch shape")
    p.add_argument("--image", required=True, help="scene PGM (P5)")
    p.add_argument("--boxes", required=True, help="target boxes JSON")
    p.add_argument("--config", default=None, help="JSON config file (flat keys)")
    p.add_argument("--objective", default="template",
                   choices=["mean_intensity", "template", "mask_match"])
    p.add_argument("--target-mask", default=None,
                   help="reference mask PGM (mask_match objective)")
    p.add_argument("--out-shape", default="shape.json")
    p.add_argument("--out-mask", default="mask.pgm")
    p.add_argument("--trace", default="trace.csv")
    p.add_argument("--report", default="report.json")
    _add_config_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("rasterize", help="rasterize a shape JSON to a mask")
    p.add_argument("--shape", required=True)
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--grid-w", type=int, default=None)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default="mask.pgm")
    p.add_argument("--raw", default=None, help="also dump raw float64 + sidecar")
    p.add_argument("--svg", default=None, help="also write the curve as SVG")
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("reconstruct", help="fit a shape to a binary mask")
    p.add_argument("--target", required=True, help="target mask PGM")
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--iters", type=int, default=800)
    p.add_argument("--samples", type=int, default=192)
    p.add_argument("--learning-rate", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default="theta.json")
    p.add_argument("--report", default="report.json")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="ASR table for a shape on a scene")
    p.add_argument("--image", required=True)
    p.add_argument("--boxes", required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--objective", default="template",
                   choices=["mean_intensity", "template"])
    p.add_argument("--thresholds", default="0.1,0.3,0.5,0.7")
    p.add_argument("--out", default="report.json")
    p.add_argument("--svg-curve", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the rasterization kernels")
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"fsf: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalAbortError as exc:
        print(f"fsf: numerical abort: {exc} "
              f"({len(exc.trace)} iterations recorded)", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
