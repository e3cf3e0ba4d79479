"""Command-line entry point: ``xmask-attack {attack,eval,sweep,mask-preview}``."""

from __future__ import annotations

import argparse
import logging
import sys

import torch

from .config import load_config, with_overrides
from .errors import XMaskAttackError


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults if omitted)")
    common.add_argument("--out", default="out", help="output root directory")
    common.add_argument("--workers", type=int, default=1, help="images processed concurrently")
    common.add_argument("--seed", type=int, help="master seed (overrides attack.seed)")
    common.add_argument("--encoder", help="'toy' or BACKEND:MODEL_ID, e.g. transformers:openai/clip-vit-base-patch16")
    common.add_argument("--run-id", help="name of the run directory (default: timestamped)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="xmask-attack",
                                description="Sparse X-shaped adversarial attacks on image-text encoders.")
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("attack", parents=[common], help="attack every image in a directory")
    a.add_argument("inputs", help="directory of images plus labels.csv")
    e = sub.add_parser("eval", parents=[common], help="compare clean and adversarial images")
    e.add_argument("clean", help="clean image directory (with labels.csv)")
    e.add_argument("adversarial", help="adversarial image directory or attack run directory")
    sub.add_parser("sweep", parents=[common], help="ablation sweep over one axis")
    m = sub.add_parser("mask-preview", parents=[common], help="render the mask and print coverage")
    m.add_argument("--height", type=int, default=224)
    m.add_argument("--width", type=int, default=224)
    m.add_argument("--output", default=None, help="PNG path (default: OUT/mask_preview.png)")
    return p


def _effective_config(args):
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["attack.seed"] = args.seed
    if args.encoder:
        kind, _, model_id = args.encoder.partition(":")
        overrides["encoder.kind"] = kind
        if model_id:
            overrides["encoder.model_id"] = model_id
    return with_overrides(cfg, **overrides) if overrides else cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import runtime

    try:
        cfg = _effective_config(args)
        if args.command == "mask-preview":
            from pathlib import Path

            out = args.output or str(Path(args.out) / "mask_preview.png")
            res = runtime.cmd_mask_preview(cfg, out, args.height, args.width)
        elif args.command == "attack":
            res = runtime.cmd_attack(cfg, args.inputs, args.out, workers=args.workers,
                                     run_id=args.run_id)
        elif args.command == "eval":
            res = runtime.cmd_eval(cfg, args.clean, args.adversarial, args.out, run_id=args.run_id)
        else:
            if args.workers > 1:
                torch.set_num_threads(max(1, torch.get_num_threads() // args.workers))
            res = runtime.cmd_sweep(cfg, args.out, workers=args.workers, run_id=args.run_id)
    except XMaskAttackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    stream = sys.stdout if res.status == 0 else sys.stderr
    for line in res.messages:
        print(line, file=stream)
    return res.status


if __name__ == "__main__":
    sys.exit(main())
