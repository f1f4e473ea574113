"""Command-line front end.

Subcommands: keygen-inspect, protect, recover, train, evaluate.
Exit codes: 0 success, 1 usage error, 2 I/O error, 3 shape/model error.

Secrets come from --key or the SECUREFLOW_KEY environment variable (flag
wins); they are never echoed. The protection byproduct is written only
when --keep-byproduct is passed: it can substitute for the key, so by
default it is never materialized. Every run echoes its resolved
configuration (sans key) and seed to stdout for reproducibility.

Train options may come from a `key = value` config file (# comments
allowed); explicit flags override file entries.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .imageio import DimensionError, Image, load_image, save_image
from .keygen import derive_bitmap, keygen
from .metrics import evaluate_suite, write_csv
from .obfuscators import KINDS, eval_spec
from .objective import LossWeights
from .pipeline import protect, recover
from .tensor import ShapeError
from .trainer import (CheckpointError, TrainConfig, load_checkpoint,
                      read_checkpoint_header, save_checkpoint, synthetic_faces,
                      train, write_loss_csv)

KEY_ENV = "SECUREFLOW_KEY"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="secureflow",
                description="Key-conditioned reversible image obfuscation.")
    sub = p.add_subparsers(dest="command", required=True)

    ki = sub.add_parser("keygen-inspect", help="derive and summarize a secret map")
    ki.add_argument("--key", help=f"password (or set {KEY_ENV})")
    ki.add_argument("--width", type=int, default=112)
    ki.add_argument("--height", type=int, default=112)

    pr = sub.add_parser("protect", help="obfuscate an image reversibly")
    pr.add_argument("--model", required=True)
    pr.add_argument("--in", dest="infile", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--key", help=f"password (or set {KEY_ENV})")
    group = pr.add_mutually_exclusive_group()
    group.add_argument("--obfuscator", choices=KINDS, default="pl",
                       help="template generator, fixed eval config")
    group.add_argument("--template", help="use this image as the template")
    pr.add_argument("--keep-byproduct", metavar="PATH",
                    help="also write the sensitive protection byproduct")

    rc = sub.add_parser("recover", help="recover the original with a key")
    rc.add_argument("--model", required=True)
    rc.add_argument("--in", dest="infile", required=True)
    rc.add_argument("--out", required=True)
    rc.add_argument("--key", help=f"password (or set {KEY_ENV})")

    tr = sub.add_parser("train", help="train a toy-scale model")
    tr.add_argument("--config", help="key = value option file; flags override")
    tr.add_argument("--out", help="checkpoint output path")
    tr.add_argument("--loss-csv", help="write per-step loss log here")
    tr.add_argument("--data", help="directory of PNG/PPM training images")
    tr.add_argument("--images", type=int, help="synthetic dataset size (no --data)")
    for name, typ in (("mode", str), ("steps", int), ("batch", int), ("lr", float),
                      ("beta1", float), ("beta2", float), ("seed", int), ("side", int),
                      ("blocks", int), ("growth", int), ("alpha", float),
                      ("check-every", int), ("spec-mode", str), ("clip-norm", float),
                      ("lr-halflife", int)):
        tr.add_argument(f"--{name}", type=typ, dest=name.replace("-", "_"))
    tr.add_argument("--obfuscators", help="comma list from {gb,pl,mb,ms}")
    for name in ("beta", "lam1", "lam2", "lam3", "margin"):
        tr.add_argument(f"--{name}", type=float)

    ev = sub.add_parser("evaluate", help="metric report over a directory of images")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--report", required=True, help="output CSV path")
    ev.add_argument("--obfuscator", choices=KINDS, default="pl")
    ev.add_argument("--seed", type=int, default=0)
    return p


def _resolve_key(args) -> bytes:
    key = getattr(args, "key", None)
    source = "--key"
    if key is None:
        key = os.environ.get(KEY_ENV)
        source = f"env {KEY_ENV}"
    if not key:
        raise UsageError(f"no key given: pass --key or set {KEY_ENV}")
    print(f"key source: {source}")
    return key.encode("utf-8")


def _echo(config: dict):
    print("resolved config:", json.dumps(config, sort_keys=True, default=str))


def _load_dir(path) -> list:
    d = Path(path)
    if not d.is_dir():
        raise OSError(f"{path} is not a directory")
    files = sorted(q for q in d.iterdir() if q.suffix.lower() in (".png", ".ppm", ".pnm"))
    if not files:
        raise OSError(f"no PNG/PPM images found in {path}")
    return [load_image(q) for q in files]


def _cmd_keygen_inspect(args) -> int:
    key = _resolve_key(args)
    _echo({"command": "keygen-inspect", "width": args.width, "height": args.height})
    bitmap = derive_bitmap(key, args.width, args.height)
    K = keygen(key, args.width, args.height)
    vals, counts = np.unique(K, return_counts=True)
    print(f"bitmap: {bitmap.shape[0]}x{bitmap.shape[1]}, "
          f"+1 fraction {np.mean(bitmap > 0):.4f}")
    print(f"secret map: shape {K.shape}")
    print("entry histogram:", {float(v): int(c) for v, c in zip(vals, counts)})
    return 0


def _cmd_protect(args) -> int:
    key = _resolve_key(args)
    _echo({"command": "protect", "model": args.model, "in": args.infile,
           "out": args.out, "obfuscator": args.obfuscator,
           "template": args.template, "keep_byproduct": bool(args.keep_byproduct)})
    model = load_checkpoint(args.model)
    img = load_image(args.infile)
    if args.template:
        spec = load_image(args.template, role="pre-obfuscated")
    else:
        spec = eval_spec(args.obfuscator, img.height, img.width)
    out = protect(model, img, spec, key)
    save_image(out.protected, args.out)
    if args.keep_byproduct:
        save_image(out.byproduct, args.keep_byproduct)
    print(f"wrote {args.out}")
    return 0


def _cmd_recover(args) -> int:
    key = _resolve_key(args)
    _echo({"command": "recover", "model": args.model, "in": args.infile, "out": args.out})
    model = load_checkpoint(args.model)
    img = load_image(args.infile, role="protected")
    out = recover(model, img, key)
    save_image(out.recovered, args.out)
    print(f"wrote {args.out}")
    return 0


def _parse_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot read config file {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


_TRAIN_TYPES = {
    "mode": str, "steps": int, "batch": int, "lr": float, "beta1": float,
    "beta2": float, "seed": int, "side": int, "blocks": int, "growth": int,
    "alpha": float, "check_every": int, "spec_mode": str, "clip_norm": float,
    "lr_halflife": int,
    "beta": float, "lam1": float, "lam2": float, "lam3": float, "margin": float,
    "obfuscators": str, "images": int, "data": str, "out": str, "loss_csv": str,
}


def _merged_train_options(args) -> dict:
    opts = {}
    if args.config:
        raw = _parse_config_file(args.config)
        for k, v in raw.items():
            if k not in _TRAIN_TYPES:
                raise UsageError(f"unknown config key {k!r} in {args.config}")
            try:
                opts[k] = _TRAIN_TYPES[k](v)
            except ValueError as e:
                raise UsageError(f"bad value for {k!r} in {args.config}: {e}") from e
    for k in _TRAIN_TYPES:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    return opts


def _cmd_train(args) -> int:
    opts = _merged_train_options(args)
    weights = LossWeights(
        beta=opts.get("beta", 5.0), lam1=opts.get("lam1", 1.0),
        lam2=opts.get("lam2", 1.0), lam3=opts.get("lam3", 1.0),
        margin=opts.get("margin", 1.0))
    kinds = tuple(k.strip() for k in opts.get("obfuscators", ",".join(KINDS)).split(",") if k.strip())
    cfg = TrainConfig(
        mode=opts.get("mode", "randwr"), steps=opts.get("steps", 2000),
        batch=opts.get("batch", 12), lr=opts.get("lr", 1e-5),
        beta1=opts.get("beta1", 0.9), beta2=opts.get("beta2", 0.999),
        seed=opts.get("seed", 0), weights=weights, obfuscators=kinds,
        spec_mode=opts.get("spec_mode", "train"),
        side=opts.get("side", 112), blocks=opts.get("blocks", 3),
        growth=opts.get("growth", 32), alpha=opts.get("alpha", 2.0),
        check_every=opts.get("check_every", 500),
        clip_norm=opts.get("clip_norm", 0.0),
        lr_halflife=opts.get("lr_halflife", 0))
    out_path = opts.get("out")
    if not out_path:
        raise UsageError("train needs --out (checkpoint path)")
    echo = {"command": "train", "out": out_path, "loss_csv": opts.get("loss_csv"),
            "data": opts.get("data"), "images": opts.get("images", 200),
            "seed": cfg.seed}
    echo.update({k: v for k, v in _config_dict(cfg).items()})
    _echo(echo)

    if opts.get("data"):
        dataset = _load_dir(opts["data"])
    else:
        dataset = synthetic_faces(opts.get("images", 200), cfg.side, cfg.seed + 1)
    model, log = train(cfg, dataset)
    save_checkpoint(model, cfg, out_path)
    if opts.get("loss_csv"):
        write_loss_csv(log, opts["loss_csv"])
    print(f"trained {cfg.steps} steps; final total loss {log[-1][4]:.6f}")
    print(f"wrote {out_path}")
    return 0


def _config_dict(cfg: TrainConfig) -> dict:
    return {"mode": cfg.mode, "steps": cfg.steps, "batch": cfg.batch, "lr": cfg.lr,
            "seed": cfg.seed, "side": cfg.side, "blocks": cfg.blocks,
            "growth": cfg.growth, "alpha": cfg.alpha,
            "obfuscators": ",".join(cfg.obfuscators), "spec_mode": cfg.spec_mode,
            "clip_norm": cfg.clip_norm, "lr_halflife": cfg.lr_halflife}


def _cmd_evaluate(args) -> int:
    _echo({"command": "evaluate", "model": args.model, "data": args.data,
           "report": args.report, "obfuscator": args.obfuscator, "seed": args.seed})
    model = load_checkpoint(args.model)
    images = _load_dir(args.data)
    side = model.config.side
    for im in images:
        if im.pixels.shape != (3, side, side):
            raise ShapeError(f"dataset image is {im.pixels.shape}, model side is {side}")
    rng = np.random.default_rng(args.seed)
    specs = [eval_spec(args.obfuscator, side, side) for _ in images]
    keys = [rng.integers(0, 256, 16, dtype=np.uint8).tobytes() for _ in images]
    report = evaluate_suite(model, images, specs, keys, model.config.mode, seed=args.seed)
    write_csv(report, args.report)
    agg = report.aggregates()
    for pair in sorted(agg):
        print(f"{pair}: psnr {agg[pair]['psnr_db']:.2f} dB, ssim {agg[pair]['ssim']:.4f}, "
              f"perc {agg[pair]['perc']:.4f}")
    print(f"wrote {args.report}")
    return 0


_DISPATCH = {
    "keygen-inspect": _cmd_keygen_inspect,
    "protect": _cmd_protect,
    "recover": _cmd_recover,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _DISPATCH[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        print(f"run 'secureflow --help' for usage", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
    except (ShapeError, DimensionError, CheckpointError, ValueError) as e:
        print(f"model/shape error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
