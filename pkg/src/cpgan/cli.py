"""Command-line entry point: ``cpgan <command> ...``.

Log verbosity comes from ``CPGAN_LOG_LEVEL`` (default WARNING). Failures
print a single JSON line ``{"error": ..., "type": ..., "command": ...}`` on
stderr and exit nonzero: 2 for usage errors, 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

LOG_ENV = "CPGAN_LOG_LEVEL"
log = logging.getLogger("cpgan")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(record: dict) -> None:
    print(json.dumps(record), flush=True)


def cmd_synth_data(args) -> None:
    from .data import build_dataset, save_dataset

    ds = build_dataset(args.n, args.seed, args.train_fraction)
    manifest = save_dataset(ds, args.out_dir, {"n": args.n, "seed": args.seed})
    _emit({"written": len(ds.train) + len(ds.test), "train": len(ds.train), "test": len(ds.test),
           "manifest": str(manifest)})


def _content_images(in_dir: Path) -> list[Path]:
    paths = sorted(in_dir.glob("*_ui_hr.png")) or sorted(in_dir.glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG images in {in_dir}")
    return paths


def cmd_augment(args) -> None:
    from .data import load_png, save_png
    from .rain import rain_generate, train_rain

    if args.styles < 1:
        raise ValueError("--styles must be >= 1")
    paths = _content_images(Path(args.in_dir))
    images = [load_png(p) for p in paths]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"content images differ in size: {sorted(shapes)}")
    contents = np.stack(images)
    model, history = train_rain(contents, args.steps, args.seed)
    if history:
        log.info("rain loss %.4f -> %.4f over %d steps", history[0]["total"], history[-1]["total"], len(history))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for idx, (path, img) in enumerate(zip(paths, contents)):
        seeds = np.random.default_rng([args.seed, idx]).integers(2**62, size=args.styles)
        stem = path.stem.removesuffix("_ui_hr")
        for k, s in enumerate(seeds):
            save_png(out / f"{stem}_style{k:02d}.png", rain_generate(model, img[None], int(s))[0])
            written += 1
    _emit({"written": written, "images": len(paths), "styles": args.styles, "steps": args.steps})


def cmd_train(args) -> None:
    from .config import load_config
    from .train import train

    cfg = load_config(args.config)
    result = train(cfg)
    last = result.validation[-1] if result.validation else {}
    _emit({"iterations": cfg.iterations, "checkpoint": str(result.checkpoint_path), **last})


def cmd_eval(args) -> None:
    from .train import evaluate, format_report

    print(format_report(evaluate(args.checkpoint, args.data_dir)), flush=True)


def cmd_infer(args) -> None:
    from .train import infer

    infer(args.checkpoint, args.input, args.guide, args.out, resize=args.resize)
    _emit({"written": args.out})


def cmd_gradcheck(args) -> None:
    from .gradcheck import CASES, TOLERANCE, run_suite

    names = args.cases.split(",") if args.cases else list(CASES)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise UsageError(f"unknown gradcheck cases: {', '.join(unknown)}")
    seeds = tuple(range(args.seeds))
    failed = []
    for r in run_suite(names, seeds):
        _emit({"case": r.name, "seed": r.seed, "max_rel_error": float(r.error), "passed": bool(r.passed),
               "seconds": round(r.seconds, 3)})
        if not r.passed:
            failed.append(f"{r.name}/seed{r.seed}")
    if failed:
        raise AssertionError(f"gradient check above {TOLERANCE} for {', '.join(failed)}")


def build_parser() -> Parser:
    ap = Parser(prog="cpgan", description="Face hallucination from shaded 16x16 thumbnails.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("synth-data", help="write procedural face pairs as PNGs plus manifest.json")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("augment", help="train RaIN on a folder of faces and write sampled relit styles")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--styles", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=200, help="RaIN training steps before sampling")
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("train", help="train from a key = value config file")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint and the bicubic baseline")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="hallucinate one 128x128 face")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--guide", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resize", action="store_true", help="bicubic-resize inputs of the wrong size")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("gradcheck", help="central-difference checks of every differentiable op")
    p.add_argument("--cases", default="", help="comma-separated subset of case names")
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(fn=cmd_gradcheck)
    return ap


def configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise UsageError(f"{LOG_ENV}={level!r} is not a logging level")
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    command = None
    try:
        configure_logging()
        args = build_parser().parse_args(argv)
        command = args.command
        args.fn(args)
        return 0
    except UsageError as exc:
        _fail(exc, command, "usage")
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parseable line
        log.debug("command failed", exc_info=True)
        _fail(exc, command, type(exc).__name__)
        return 1


def _fail(exc: Exception, command: str | None, kind: str) -> None:
    message = " ".join(str(exc).split()) or kind
    print(json.dumps({"error": message, "type": kind, "command": command}), file=sys.stderr, flush=True)


if __name__ == "__main__":
    sys.exit(main())
