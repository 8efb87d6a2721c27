"""``sesr`` command line: train, sr, eval, gradcheck, params, bench.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import gradcheck
from .checkpoint import load_checkpoint
from .color import luma
from .config import RunConfig, config_digest, load_config, with_overrides
from .errors import CheckpointError, ConfigError, SESRError, ShapeError
from .evaluation import METHODS, evaluate_dataset, super_resolve
from .images import list_images, read_image, write_image
from .imresize import imresize, modcrop
from .model import build_model, count_params, forward_pyramid
from .training import OptimizerState, PatchSampler, fit

log = logging.getLogger("sesr")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DTYPES = {"f32": np.float32, "f64": np.float64}


class UsageError(SESRError):
    pass


# ------------------------------------------------------------------ helpers

def _resolve(args, model_over: dict | None = None, train_over: dict | None = None) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    train_over = dict(train_over or {})
    if args.seed is not None:
        train_over["seed"] = args.seed
    return with_overrides(cfg, model_over, train_over)


def _announce(payload: dict) -> None:
    print(f"config {config_digest(payload)} {json.dumps(payload, sort_keys=True)}", flush=True)


def _need_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} not found: {p}")
    return p


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _load_model(args):
    model, _, _ = load_checkpoint(_need_file(args.checkpoint, "checkpoint"), dtype=DTYPES[args.precision])
    return model


def _training_planes(data_dir: Path, limit: int | None):
    paths = list_images(data_dir)
    if not paths:
        raise UsageError(f"no images in {data_dir}")
    planes = []
    for p in paths[:limit]:
        try:
            planes.append(luma(read_image(p), full_range=True) / 255.0)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", p, exc)
    return planes


# ------------------------------------------------------------- subcommands

def cmd_train(args) -> int:
    data_dir = _need_dir(args.data_dir, "data directory")
    out_dir = Path(args.out_dir)
    model_over = {"recursion_depth": args.recursion_depth, "block_kind": args.block_kind}
    train_over = {"epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr,
                  "patch_size_lr": args.patch_size, "patches_per_epoch": args.patches_per_epoch}
    cfg = _resolve(args, model_over, train_over)
    dtype = DTYPES[args.precision]
    start, state = 0, None
    if args.resume:
        model, state, meta = load_checkpoint(_need_file(args.resume, "checkpoint"), dtype=dtype)
        if model.config != cfg.model:
            log.warning("resuming with the checkpoint's model config; the requested one is ignored")
            cfg = RunConfig(model.config, cfg.train)
        if state is None:
            raise UsageError(f"{args.resume} carries no optimizer state and cannot be resumed")
        if state.kind != cfg.train.optimizer:
            raise UsageError(f"checkpoint optimizer {state.kind!r} differs from {cfg.train.optimizer!r}")
        start = int(meta.get("epoch", 0))
    else:
        model = build_model(cfg.model, seed=cfg.train.seed, dtype=dtype)
    _announce({**cfg.to_dict(), "precision": args.precision, "start_epoch": start})

    planes = _training_planes(data_dir, args.limit_images)
    t = cfg.train
    data = PatchSampler(planes, t.patch_size_lr, t.patches_per_epoch, t.augment, t.seed, dtype)
    state = state or OptimizerState.create(t.optimizer, model.params)

    def report(rec):
        print(f"epoch {rec['epoch']:4d}  loss {rec['mean_loss']:.6f}  lr {rec['lr']:.2e}  "
              f"{rec['wall_seconds']:.1f}s", flush=True)

    out_dir.mkdir(parents=True, exist_ok=True)
    fit(model, data, t, state=state, start_epoch=start, log_path=out_dir / "train_log.jsonl",
        checkpoint_dir=out_dir, checkpoint_every=args.checkpoint_every, on_epoch=report)
    if start >= t.epochs:
        print(f"nothing to do: checkpoint is at epoch {start}, target {t.epochs}")
    return EXIT_OK


def cmd_sr(args) -> int:
    src = _need_file(args.input, "input image")
    model = _load_model(args)
    _announce({"model": model.config.to_dict(), "checkpoint": str(args.checkpoint), "scale": args.scale,
               "precision": args.precision})
    img = read_image(src)
    out = super_resolve(model, img, args.scale)
    expected = (img.shape[0] * args.scale, img.shape[1] * args.scale)
    if out.shape[:2] != expected:
        raise ShapeError(f"output {out.shape[:2]} is not {args.scale}x the input")
    write_image(args.output, out)
    print(f"wrote {args.output} ({out.shape[1]}x{out.shape[0]})")
    return EXIT_OK


def cmd_eval(args) -> int:
    data = _need_dir(args.dataset_dir, "dataset directory")
    model = None
    if args.method == "sesr":
        if not args.checkpoint:
            raise UsageError("--checkpoint is required for method sesr")
        model = _load_model(args)
    settings = {"method": args.method, "dataset": str(data), "scale": args.scale,
                "full_range": args.full_range, "antialias": not args.no_antialias,
                "quantize": args.quantize, "border_crop": args.border_crop,
                "model": model.config.to_dict() if model else None}
    _announce(settings)
    report = evaluate_dataset(args.method, data, args.scale, model=model, border_crop=args.border_crop,
                              full_range=args.full_range, antialias=not args.no_antialias,
                              quantize=args.quantize, threads=args.threads)
    print(report.table(per_image=not args.summary))
    print(f"{len(report.images)} images in {report.wall_seconds:.2f}s")
    if args.json:
        Path(args.json).write_text(report.to_json(indent=2))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seeds = tuple(range(args.seeds))
    _announce({"seeds": list(seeds), "composites": not args.quick})
    results = gradcheck.run_suite(seeds, include_composites=not args.quick)
    for r in results:
        print(r.line(), flush=True)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_params(args) -> int:
    cfg = _resolve(args, {"recursion_depth": args.recursion_depth, "block_kind": args.block_kind})
    _announce({"model": cfg.model.to_dict()})
    counts = count_params(build_model(cfg.model, seed=cfg.train.seed))
    width = max(len(g) for g in counts["by_group"])
    print(f"{'group'.ljust(width)}  {'weights':>9}  {'biases':>7}")
    for group, c in counts["by_group"].items():
        print(f"{group.ljust(width)}  {c['weight']:>9,}  {c['bias']:>7,}")
    print(f"{'total'.ljust(width)}  {counts['weights']:>9,}  {counts['biases']:>7,}")
    print(f"learnable scalars: {counts['total']:,} ({counts['total'] / 1000:.1f}k)")
    return EXIT_OK


def cmd_bench(args) -> int:
    data = _need_dir(args.dataset_dir, "dataset directory")
    if args.checkpoint:
        model = _load_model(args)
    else:
        cfg = _resolve(args)
        model = build_model(cfg.model, seed=cfg.train.seed, dtype=DTYPES[args.precision])
    _announce({"model": model.config.to_dict(), "dataset": str(data), "scale": args.scale,
               "repeat": args.repeat, "precision": args.precision})
    times = []
    paths = list_images(data)[:args.limit_images]
    for p in paths:
        y = luma(read_image(p), full_range=True) / 255.0
        lr = imresize(modcrop(y, args.scale), 1 / args.scale)[None, None].astype(model.dtype)
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            forward_pyramid(model, lr, max_scale=args.scale)
            times.append(time.perf_counter() - t0)
        print(f"{p.name}: lr {lr.shape[3]}x{lr.shape[2]}  {statistics.median(times[-args.repeat:]):.3f}s")
    if not times:
        raise UsageError(f"no images in {data}")
    print(f"x{args.scale} forward over {len(paths)} images: mean {statistics.mean(times):.4f}s  "
          f"median {statistics.median(times):.4f}s")
    return EXIT_OK


# --------------------------------------------------------------- argparse

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (schema_version, model, train)")
    common.add_argument("--seed", type=int, help="overrides train.seed, also used for initialization")
    common.add_argument("--threads", type=int, help="worker threads for per-image evaluation")
    common.add_argument("--precision", choices=sorted(DTYPES), default="f32")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sesr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train on a directory of HR images")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patch-size", type=int, help="LR patch size")
    p.add_argument("--patches-per-epoch", type=int)
    p.add_argument("--limit-images", type=int)
    p.add_argument("--checkpoint-every", type=int, default=1)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--recursion-depth", type=int)
    p.add_argument("--block-kind", choices=["se", "plain"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", parents=[common], help="super-resolve one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--scale", type=int, choices=[2, 4], default=4)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM over a dataset directory")
    p.add_argument("--method", choices=METHODS, default="bicubic")
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--scale", type=int, choices=[1, 2, 4], default=4)
    p.add_argument("--checkpoint")
    p.add_argument("--border-crop", type=int, help="default: the scale")
    p.add_argument("--full-range", action="store_true", help="full-range instead of studio-swing Y")
    p.add_argument("--no-antialias", action="store_true")
    p.add_argument("--quantize", action="store_true", help="round LR and output planes to 8 bits")
    p.add_argument("--summary", action="store_true", help="print only the aggregate row")
    p.add_argument("--json", help="write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--quick", action="store_true", help="kernels only")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", parents=[common], help="parameter count breakdown")
    p.add_argument("--recursion-depth", type=int)
    p.add_argument("--block-kind", choices=["se", "plain"])
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("bench", parents=[common], help="forward-pass timing")
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--scale", type=int, choices=[2, 4], default=4)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--limit-images", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CheckpointError, ShapeError, FileNotFoundError) as exc:
        print(f"sesr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SESRError, OSError, FloatingPointError) as exc:
        print(f"sesr {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
