"""Command-line entry: train a scorer from a labeled dataset file.

Labeling against a live oracle is a library concern (see
``scorerlab.labeling``); the CLI covers the reproducible half of the
pipeline, from a JSONL of label records to an exported artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .labeling import read_records
from .model import ModelConfig
from .training import TrainConfig, TrainingError, train_and_export

log = logging.getLogger("scorerlab")

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_MODEL_KEYS = {f.name for f in fields(ModelConfig)}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith((".yaml", ".yml")):
        import yaml  # optional extra; JSON needs no third-party parser

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError("config must be a key-value table")
    unknown = set(data) - _TRAIN_KEYS - _MODEL_KEYS
    if unknown:
        known = ", ".join(sorted(_TRAIN_KEYS | _MODEL_KEYS))
        raise ValueError(f"unknown config key {sorted(unknown)[0]!r}; known keys: {known}")
    return data


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scorerlab", description="train and export a step-relevance scorer"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    train = sub.add_parser("train", help="train from a JSONL of label records")
    train.add_argument("--dataset", required=True, help="label records, one JSON object per line")
    train.add_argument("--out", required=True, help="artifact output directory")
    train.add_argument("--config", help="JSON or YAML table of training/model settings")
    train.add_argument("--lp-epochs", type=int, help="override linear-probe epochs")
    train.add_argument("--ft-epochs", type=int, help="override fine-tune epochs")
    train.add_argument("--seed", type=int, help="override training seed")
    train.add_argument("--probes", type=int, default=100, help="probe rows to export")
    return parser


def cmd_train(args: argparse.Namespace) -> int:
    settings = _load_config(args.config)
    for key, value in (
        ("lp_epochs", args.lp_epochs),
        ("ft_epochs", args.ft_epochs),
        ("seed", args.seed),
    ):
        if value is not None:
            settings[key] = value
    cfg = TrainConfig(**{k: v for k, v in settings.items() if k in _TRAIN_KEYS})
    model_cfg = ModelConfig(**{k: v for k, v in settings.items() if k in _MODEL_KEYS})
    records = read_records(args.dataset)
    report = train_and_export(
        records, args.out, cfg=cfg, model_cfg=model_cfg, probe_count=args.probes
    )
    json.dump(
        {
            "artifact_dir": str(report.artifact_dir),
            "n_train": report.n_train,
            "n_val": report.n_val,
            "initial_loss": report.initial_loss,
            "final_loss": report.final_loss,
            "val_loss": report.val_loss,
        },
        sys.stdout,
    )
    sys.stdout.write("\n")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return cmd_train(args)
    except (TrainingError, OSError, ValueError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
