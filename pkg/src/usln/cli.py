"""Command line: ``usln train | enhance | eval | inspect``.

Exit codes: 0 ok, 1 some files failed, 2 config/weights error, 3 data error,
4 numerical abort.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import data, metrics
from .losses import ConfigError, LossConfig
from .model import GROUP_SIZES, TOTAL_PARAMS, ModuleTrace, WeightFileError, enhance, load_weights
from .trainer import NumericalError, TrainConfig, fit

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
RGB_STAGES = ("dsbm_gw", "dsbm_wp", "dsbm_out", "mcsm_rgb", "mcsm_hsi_rgb", "mcsm_lab_rgb", "mcsm_out")

log = logging.getLogger("usln")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --- config ------------------------------------------------------------------

_TRAIN_KEYS = {"epochs": int, "batch_size": int, "lr0": float, "lr_decay_per_epoch": float,
               "adam_beta1": float, "adam_beta2": float, "adam_eps": float, "seed": int,
               "init_jitter": float, "checkpoint_every": int}
_LOSS_KEYS = {"lambda_ssim": float, "lambda_perceptual": float, "ssim_c1": float, "ssim_c2": float}


def read_train_config(path: str | Path) -> tuple[TrainConfig, dict]:
    """Parse an INI-style config into a TrainConfig plus data/output settings.

    Only ``[data] manifest`` and ``[data] output_dir`` are required; every
    training value defaults to the standard protocol.
    """
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}", EXIT_CONFIG)
    cp = configparser.ConfigParser()
    try:
        cp.read(path, encoding="utf-8")
        base = path.parent
        if not cp.has_option("data", "manifest") or not cp.has_option("data", "output_dir"):
            raise CliError(f"{path}: [data] needs manifest and output_dir", EXIT_CONFIG)
        extra = {
            "manifest": base / cp.get("data", "manifest"),
            "output_dir": base / cp.get("data", "output_dir"),
            "limit": cp.getint("data", "limit", fallback=None),
        }
        train = {k: conv(cp.get("train", k)) for k, conv in _TRAIN_KEYS.items()
                 if cp.has_option("train", k)}
        if cp.has_option("train", "resize"):
            raw = cp.get("train", "resize").strip().lower()
            train["resize"] = None if raw in ("", "none", "0") else int(raw)
        loss = {k: conv(cp.get("loss", k)) for k, conv in _LOSS_KEYS.items() if cp.has_option("loss", k)}
        if cp.has_option("loss", "perceptual_enabled"):
            loss["perceptual_enabled"] = cp.getboolean("loss", "perceptual_enabled")
        cfg = TrainConfig(**train, loss=LossConfig(**loss))
    except (configparser.Error, ValueError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_CONFIG) from exc
    return cfg, extra


# --- commands ------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg, extra = read_train_config(args.config)
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.__post_init__()
    limit = args.limit if args.limit is not None else extra["limit"]
    out_dir = Path(args.output_dir) if args.output_dir else extra["output_dir"]
    try:
        manifest = data.read_manifest(extra["manifest"])
        pairs = data.load_pairs(manifest, resize=cfg.resize, limit=limit)
    except (data.ManifestError, data.DecodeError) as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    if cfg.loss.perceptual_enabled:
        raise CliError("perceptual loss needs a feature extractor; use the Python API", EXIT_CONFIG)
    t0 = time.perf_counter()
    try:
        result = fit(cfg, pairs, out_dir, resume=args.resume)
    except NumericalError as exc:
        raise CliError(f"numerical abort: {exc}", EXIT_NUMERIC) from exc
    except WeightFileError as exc:
        raise CliError(f"cannot resume: {exc}", EXIT_CONFIG) from exc
    last = result.history[-1] if result.history else None
    print(f"weights={result.weights_path}")
    print(f"log={result.log_path}")
    if last is not None:
        print(f"final_loss={last.total:.6g}")
    print(f"seconds={time.perf_counter() - t0:.2f}")
    return EXIT_OK


def _load_weights(path) -> "object":
    try:
        return load_weights(path)
    except FileNotFoundError as exc:
        raise CliError(f"weights not found: {path}", EXIT_CONFIG) from exc
    except WeightFileError as exc:
        raise CliError(f"{path}: {exc}", EXIT_CONFIG) from exc


def _image_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise CliError(f"input not found: {path}", EXIT_DATA)
    return sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_enhance(args) -> int:
    weights = _load_weights(args.weights)
    files = _image_files(Path(args.input))
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    failed = 0
    for path in files:
        try:
            img = data.load_image(path)
            if args.resize:
                img = data.resize_bilinear(img, args.resize, args.resize)
            trace = ModuleTrace() if args.trace else None
            out = enhance(img.data, weights, trace)
            data.save_image(out, out_dir / f"{path.stem}.png")
            if trace is not None:
                tdir = out_dir / f"{path.stem}_trace"
                tdir.mkdir(exist_ok=True)
                np.savez(tdir / "stages.npz", **trace.stages)
                for name in RGB_STAGES:
                    data.save_image(trace.stages[name], tdir / f"{name}.png")
        except (data.DecodeError, OSError, ValueError) as exc:
            failed += 1
            log.error("%s: %s", path, exc)
    print(f"enhanced={len(files) - failed} failed={failed}")
    return EXIT_PARTIAL if failed else EXIT_OK


def _reference_map(args) -> dict[str, Path]:
    if args.ref:
        return {p.stem: p for p in _image_files(Path(args.ref))}
    if args.manifest:
        try:
            manifest = data.read_manifest(args.manifest)
        except data.ManifestError as exc:
            raise CliError(str(exc), EXIT_DATA) from exc
        return {r.raw_path.stem: r.reference_path for r in manifest if r.reference_path is not None}
    return {}


def cmd_eval(args) -> int:
    preds = _image_files(Path(args.pred))
    layout = None
    if args.colorchecker:
        try:
            layout = metrics.read_patch_layout(args.colorchecker)
        except (OSError, KeyError, ValueError) as exc:
            raise CliError(f"bad patch layout {args.colorchecker}: {exc}", EXIT_CONFIG) from exc
    full_ref = not args.no_reference
    refs = _reference_map(args) if full_ref else {}
    if full_ref:
        if not (args.ref or args.manifest):
            raise CliError("full-reference eval needs --ref or --manifest (or pass --no-reference)",
                           EXIT_CONFIG)
        missing = [p.name for p in preds if p.stem not in refs]
        if missing:
            raise CliError("no reference for: " + ", ".join(missing), EXIT_DATA)
    report = metrics.MetricReport()
    try:
        for path in preds:
            pred = data.read_uint8(path)
            ref = data.read_uint8(refs[path.stem]) if full_ref else None
            report.add(path.stem, **metrics.score_image(pred, ref, layout, reference_metrics=full_ref))
    except (data.DecodeError, ValueError) as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    out = Path(args.output)
    report.write_csv(out)
    mean = report.mean()
    print("MEAN " + " ".join(f"{k}={v:.6g}" for k, v in mean.items()))
    print(f"report={out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    weights = _load_weights(args.weights)
    counts = weights.group_counts()
    for group in GROUP_SIZES:
        print(f"{group}={counts[group]}")
    print(f"total={weights.total}")
    ok = counts == GROUP_SIZES and weights.total == TOTAL_PARAMS
    print(f"status={'ok' if ok else 'mismatch'}")
    return EXIT_OK if ok else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usln", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--limit", type=int, help="use only the first N manifest records")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--resume", help="checkpoint .usln file to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance an image or a directory of images")
    p.add_argument("weights")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--trace", action="store_true", help="also dump intermediate stage images")
    p.add_argument("--resize", type=int, help="square-resize inputs first (e.g. 256)")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="score enhanced images")
    p.add_argument("pred")
    p.add_argument("--ref", help="directory of reference images (matched by file stem)")
    p.add_argument("--manifest", help="manifest mapping raw stems to references")
    p.add_argument("--no-reference", action="store_true", help="UIQM columns only")
    p.add_argument("--colorchecker", help="patch layout CSV (x,y,w,h,L,a,b)")
    p.add_argument("--output", default="report.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="print parameter counts of a weight file")
    p.add_argument("weights")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
