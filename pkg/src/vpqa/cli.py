"""Command-line front end.

Commands: train, evaluate, export-prompt, inspect. Any `--section.key value`
pair after the positional arguments overrides the corresponding config key.
Exit codes: 0 success, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import config as config_mod
from .checkpoint import describe_checkpoint, load_prompt, save_prompt
from .data import load_manifest, split_manifest
from .errors import ConfigError, VpqaError
from .metrics import evaluate
from .prompts import create_prompt, render_delta
from .train import train_prompt

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_splits(run_cfg):
    manifest = load_manifest(
        run_cfg.data.manifest_path,
        run_cfg.data.mos_range,
        dataset_id=run_cfg.data.dataset_id,
    )
    return split_manifest(manifest, run_cfg.data.split)


def cmd_train(config_path: str, overrides, resume: bool = False) -> int:
    run_cfg = config_mod.resolve(config_path, overrides)
    snapshot = run_cfg.snapshot()
    print("resolved configuration:")
    print(snapshot)
    backend = run_cfg.make_backend()
    train_mf, val_mf, _ = _load_splits(run_cfg)
    init_rng = np.random.default_rng([run_cfg.train_cfg.shuffle_seed, 7])
    prompt = create_prompt(
        run_cfg.prompt_shape,
        init=run_cfg.prompt_init,
        eps=run_cfg.prompt_init_eps,
        rng=init_rng,
    )
    os.makedirs(run_cfg.out_dir, exist_ok=True)
    with open(os.path.join(run_cfg.out_dir, "config.snapshot"), "w", encoding="utf-8") as fh:
        fh.write(snapshot)
    best, history = train_prompt(
        train_mf,
        val_mf,
        prompt,
        backend,
        run_cfg.train_cfg,
        run_dir=run_cfg.out_dir,
        resume=resume,
    )
    if history.records:
        rec = history.records[history.best_epoch - 1]
        print(
            f"done: {len(history.records)} epochs; best epoch {rec.epoch}"
            f" (val_mse={rec.val_mse:.6f}, val_srcc={rec.val_srcc:.4f},"
            f" val_plcc={rec.val_plcc:.4f})"
        )
    print(f"run directory: {run_cfg.out_dir}")
    return EXIT_OK


def cmd_evaluate(config_path: str, checkpoint_path: str, overrides, split: str = "test") -> int:
    run_cfg = config_mod.resolve(config_path, overrides)
    prompt = load_prompt(checkpoint_path)
    expected = (run_cfg.backend_cfg.input_h, run_cfg.backend_cfg.input_w)
    if (prompt.shape.height, prompt.shape.width) != expected:
        raise ConfigError(
            [
                f"checkpoint geometry {prompt.shape.height}x{prompt.shape.width}"
                f" does not match backend input {expected[0]}x{expected[1]}"
            ]
        )
    backend = run_cfg.make_backend()
    splits = dict(zip(("train", "val", "test"), _load_splits(run_cfg)))
    manifest = splits[split]
    os.makedirs(run_cfg.out_dir, exist_ok=True)
    csv_path = os.path.join(run_cfg.out_dir, f"eval_{split}_predictions.csv")
    report = evaluate(
        prompt,
        manifest,
        backend,
        prompt_checkpoint=checkpoint_path,
        per_sample_csv=csv_path,
    )
    print(report.format_table())
    json_path = os.path.join(run_cfg.out_dir, f"eval_{split}_report.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    if report.error:
        print(f"evaluation degenerate: {report.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_export_prompt(checkpoint_path: str, out_path: str) -> int:
    from PIL import Image

    prompt = load_prompt(checkpoint_path)
    rendered = render_delta(prompt)  # (3, H, W) in (0, 1)
    rgb = np.rint(np.clip(rendered, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    directory = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(directory, exist_ok=True)
    Image.fromarray(rgb).save(out_path)
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_inspect(checkpoint_path: str) -> int:
    info = describe_checkpoint(checkpoint_path)
    width = max(len(k) for k in info)
    for key, value in info.items():
        print(f"{key:<{width}}  {value}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vpqa",
        description="Train and evaluate pixel-space visual prompts for frozen quality scorers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="optimize a prompt per a run config")
    p_train.add_argument("config", help="run config (INI)")
    p_train.add_argument("--resume", action="store_true", help="continue from last.vpq")

    p_eval = sub.add_parser("evaluate", help="score a split with a trained prompt")
    p_eval.add_argument("config", help="run config (INI)")
    p_eval.add_argument("checkpoint", help="prompt checkpoint (.vpq)")
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test")

    p_export = sub.add_parser("export-prompt", help="render a checkpoint's delta to an image")
    p_export.add_argument("checkpoint")
    p_export.add_argument("out_image")

    p_inspect = sub.add_parser("inspect", help="print checkpoint header and parameter stats")
    p_inspect.add_argument("checkpoint")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = config_mod.parse_overrides(extra)
        if args.command == "train":
            return cmd_train(args.config, overrides, resume=args.resume)
        if args.command == "evaluate":
            return cmd_evaluate(args.config, args.checkpoint, overrides, split=args.split)
        if extra:
            raise ConfigError([f"unexpected arguments: {extra}"])
        if args.command == "export-prompt":
            return cmd_export_prompt(args.checkpoint, args.out_image)
        return cmd_inspect(args.checkpoint)
    except ConfigError as exc:
        print("configuration errors:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except VpqaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
