"""Command-line driver: ``touchid {synth,train,eval}``.

Exit codes:
    0  success, all outputs written
    1  bad configuration or unexpected error
    2  input missing/unreadable or output not writable
    3  data cannot support the run (too few strokes for a user, empty filter)
    4  training diverged
    5  checkpoint unreadable or inconsistent with the config/data

Set ``TOUCHID_LOG`` (e.g. ``INFO``) to control log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import pipeline
from .ingest import Action, ParseError, stroke_counts, write_csv
from .metrics import export_report
from .net import CheckpointError, TrainingDiverged
from .pipeline import ConfigError, DataError, RunConfig
from .synthgen import generate

log = logging.getLogger("touchid")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_CHECKPOINT = 5


class CommandError(Exception):
    def __init__(self, message: str, exit_code: int) -> None:
        super().__init__(message)
        self.exit_code = exit_code


def _fuse_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--data", help="touch-record CSV (written by synth, read otherwise)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="seed for every random choice in the run")
    parser.add_argument("--strokes", choices=("all", "long"), help="stroke class filter")
    parser.add_argument("--window", type=int, help="window size in records")
    parser.add_argument("--fuse", type=_fuse_list, help="numbers of strokes to fuse, e.g. 1,5,10")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="touchid", description="Touchscreen stroke identification with a deep MLP"
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    synth = sub.add_parser("synth", help="generate a synthetic touch CSV")
    _common_flags(synth)
    synth.add_argument("--users", type=int, help="number of synthetic users")
    synth.add_argument("--strokes-per-user", type=int, dest="strokes_per_user")
    synth.add_argument("--separability", type=float)

    train = sub.add_parser("train", help="train a model and write a checkpoint")
    _common_flags(train)
    train.add_argument("--epochs", type=int)
    train.add_argument("--lr", type=float, help="learning rate")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _common_flags(ev)
    ev.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoint.txt)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, then command-line flags on top."""
    config = RunConfig.load(args.config) if args.config else RunConfig()
    updates: dict[str, object] = {}
    for name in ("data", "out", "seed", "strokes", "fuse"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    if args.window is not None:
        try:
            updates["framing"] = dataclasses.replace(config.framing, window_size=args.window)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    train_updates = {}
    if getattr(args, "epochs", None) is not None:
        train_updates["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        train_updates["learning_rate"] = args.lr
    if train_updates:
        updates["train"] = dataclasses.replace(config.train, **train_updates)
    synth_updates = {}
    for flag, key in (("users", "num_users"), ("strokes_per_user", "strokes_per_user"),
                      ("separability", "separability")):
        if getattr(args, flag, None) is not None:
            synth_updates[key] = getattr(args, flag)
    if args.seed is not None:
        synth_updates["seed"] = args.seed
    if synth_updates:
        updates["synth"] = dataclasses.replace(config.synth, **synth_updates)
    try:
        return dataclasses.replace(config, **updates)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _require_data(config: RunConfig) -> Path:
    if not config.data:
        raise CommandError("no data file given (--data or config 'data')", EXIT_IO)
    path = Path(config.data)
    if not path.is_file():
        raise CommandError(f"data file not found: {path}", EXIT_IO)
    return path


def _load(config: RunConfig):
    path = _require_data(config)
    try:
        return pipeline.load_records(path)
    except ParseError as exc:
        raise CommandError(f"{path}: {exc}", EXIT_DATA) from None


def cmd_synth(config: RunConfig) -> int:
    path = Path(config.data) if config.data else Path(config.out) / "synth.csv"
    records = generate(config.synth)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            write_csv(records, fh, header=True)
    except OSError as exc:
        raise CommandError(f"cannot write {path}: {exc}", EXIT_IO) from None
    runs = sum(1 for r in records if r.action == Action.DOWN)
    users = len({r.user_id for r in records})
    print(f"wrote {path}: {len(records)} records, {runs} strokes, {users} users")
    return EXIT_OK


def cmd_train(config: RunConfig) -> int:
    records = _load(config)
    try:
        result = pipeline.run_training(records, config)
    except DataError as exc:
        raise CommandError(str(exc), EXIT_DATA) from None
    except TrainingDiverged as exc:
        raise CommandError(str(exc), EXIT_DIVERGED) from None
    data = result.data
    print(
        f"segmentation dropped {data.dropped_records} records "
        f"in {data.dropped_runs} malformed runs"
    )
    print(f"length filter removed {data.filtered_out} strokes shorter than 5 records")
    counts = stroke_counts(data.split.train)
    print(
        f"strokes: train={len(data.split.train)} val={len(data.split.val)} "
        f"test={len(data.split.test)} users={len(counts)} filter={config.strokes}"
    )
    try:
        ckpt = pipeline.write_training_outputs(result, config.out)
    except OSError as exc:
        raise CommandError(f"cannot write outputs to {config.out}: {exc}", EXIT_IO) from None
    rep = result.report
    print(
        f"best epoch {rep.best_epoch}: val_loss={rep.val_loss[rep.best_epoch]:.4f} "
        f"val_window_accuracy={rep.val_accuracy[rep.best_epoch]:.4f}"
    )
    print(f"wrote {ckpt}")
    return EXIT_OK


def cmd_eval(config: RunConfig, checkpoint_path: str | None) -> int:
    if checkpoint_path:
        path = Path(checkpoint_path)
    else:
        path = Path(config.out) / pipeline.CHECKPOINT_FILE
    if not path.is_file():
        raise CommandError(f"checkpoint not found: {path}", EXIT_IO)
    records = _load(config)
    try:
        checkpoint = pipeline.read_checkpoint(path, expected=config.framing)
        result = pipeline.run_evaluation(records, checkpoint, config)
    except CheckpointError as exc:
        raise CommandError(f"{path}: {exc}", EXIT_CHECKPOINT) from None
    except DataError as exc:
        raise CommandError(str(exc), EXIT_DATA) from None
    try:
        pipeline.write_eval_outputs(result, config.out)
    except OSError as exc:
        raise CommandError(f"cannot write outputs to {config.out}: {exc}", EXIT_IO) from None
    export_report(result.report, sys.stdout)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("TOUCHID_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        if args.command == "synth":
            return cmd_synth(config)
        if args.command == "train":
            return cmd_train(config)
        return cmd_eval(config, args.checkpoint)
    except CommandError as exc:
        print(f"touchid {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ConfigError, ValueError) as exc:
        print(f"touchid {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"touchid {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
