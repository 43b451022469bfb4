"""End-to-end training and evaluation runs shared by the CLI and the tests."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import fusion, metrics
from .framing import FramingConfig, fit_normalizer, frame_strokes
from .ingest import (
    DatasetSplit,
    Stroke,
    StrokeClass,
    TouchRecord,
    compute_class_weights,
    filter_and_classify,
    label_map,
    parse_csv,
    segment_strokes,
    split_dataset,
)
from .net import (
    Checkpoint,
    CheckpointMismatch,
    MlpModel,
    TrainConfig,
    TrainingReport,
    check_framing,
    init_model,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .synthgen import SynthSpec

log = logging.getLogger(__name__)

STROKE_FILTERS = ("all", "long")
CHECKPOINT_FILE = "checkpoint.txt"
TRAINING_REPORT_FILE = "training_report.csv"
EVAL_REPORT_FILE = "report.txt"


class DataError(ValueError):
    """Input data cannot support the requested run (exit code 3)."""


class ConfigError(ValueError):
    """Config file is malformed (exit code 1)."""


@dataclass
class RunConfig:
    data: str | None = None
    out: str = "out"
    strokes: str = "all"
    seed: int = 0
    framing: FramingConfig = field(default_factory=FramingConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    hidden_dims: tuple[int, int, int] = (512, 256, 128)
    dropout_rate: float = 0.5
    fuse: tuple[int, ...] = tuple(range(1, 11))
    max_groups_per_user: int | None = None
    synth: SynthSpec = field(default_factory=SynthSpec)

    def __post_init__(self) -> None:
        if self.strokes not in STROKE_FILTERS:
            raise ConfigError(f"strokes must be one of {STROKE_FILTERS}, got {self.strokes!r}")
        self.fuse = tuple(int(n) for n in self.fuse)
        ascending = list(self.fuse) == sorted(set(self.fuse))
        if not self.fuse or not ascending or self.fuse[0] < 1:
            raise ConfigError(f"fuse list must be non-empty, positive and ascending: {self.fuse}")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)  # type: ignore[assignment]

    def to_dict(self) -> dict[str, Any]:
        return {
            "data": self.data,
            "out": self.out,
            "strokes": self.strokes,
            "seed": self.seed,
            "framing": {
                "window_size": self.framing.window_size,
                "stride": self.framing.stride,
                "attributes": list(self.framing.attributes),
            },
            "train": dataclasses.asdict(self.train),
            "model": {"hidden_dims": list(self.hidden_dims), "dropout_rate": self.dropout_rate},
            "fuse": list(self.fuse),
            "max_groups_per_user": self.max_groups_per_user,
            "synth": dataclasses.asdict(self.synth),
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        known = {"data", "out", "strokes", "seed", "framing", "train", "model", "fuse",
                 "max_groups_per_user", "synth"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kwargs: dict[str, Any] = {k: raw[k] for k in
                                      ("data", "out", "strokes", "seed", "fuse",
                                       "max_groups_per_user") if k in raw}
            if "framing" in raw:
                fr = dict(raw["framing"])
                if "attributes" in fr:
                    fr["attributes"] = tuple(fr["attributes"])
                kwargs["framing"] = FramingConfig(**fr)
            if "train" in raw:
                kwargs["train"] = TrainConfig(**raw["train"])
            if "model" in raw:
                model = dict(raw["model"])
                if "hidden_dims" in model:
                    kwargs["hidden_dims"] = tuple(model.pop("hidden_dims"))
                if "dropout_rate" in model:
                    kwargs["dropout_rate"] = float(model.pop("dropout_rate"))
                if model:
                    raise ConfigError(f"unknown model keys: {sorted(model)}")
            if "synth" in raw:
                kwargs["synth"] = SynthSpec(**raw["synth"])
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)


@dataclass
class PreparedData:
    split: DatasetSplit
    labels: dict[int, int]
    dropped_records: int
    dropped_runs: int
    filtered_out: int

    @property
    def user_ids(self) -> list[int]:
        return sorted(self.labels, key=self.labels.__getitem__)


def load_records(path: str | os.PathLike) -> list[TouchRecord]:
    with open(path, "rb") as fh:
        return parse_csv(fh)


def prepare(records: Sequence[TouchRecord], config: RunConfig) -> PreparedData:
    """Segment, filter by length and stroke class, then split."""
    seg = segment_strokes(records)
    strokes = filter_and_classify(seg.strokes)
    filtered_out = len(seg.strokes) - len(strokes)
    if config.strokes == "long":
        strokes = [s for s in strokes if s.category is StrokeClass.LONG]
    if not strokes:
        raise DataError(f"no strokes left after applying the {config.strokes!r} stroke filter")
    try:
        split = split_dataset(strokes, seed=config.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    labels = label_map(s.user_id for s in strokes)
    if len(labels) < 2:
        raise DataError("at least two users are needed")
    return PreparedData(split, labels, seg.dropped_records, seg.dropped_runs, filtered_out)


def class_weight_vector(train_strokes: Sequence[Stroke], labels: dict[int, int]) -> np.ndarray:
    table = compute_class_weights(train_strokes, users=labels)
    weights = np.empty(len(labels))
    for user, idx in labels.items():
        weights[idx] = table[user]
    return weights


@dataclass
class TrainResult:
    model: MlpModel
    report: TrainingReport
    data: PreparedData
    checkpoint: Checkpoint


def run_training(records: Sequence[TouchRecord], config: RunConfig) -> TrainResult:
    data = prepare(records, config)
    split = data.split
    weights = class_weight_vector(split.train, data.labels)
    stats = fit_normalizer(split.train, config.framing)
    tr = frame_strokes(split.train, config.framing, stats, data.labels)
    va = frame_strokes(split.val, config.framing, stats, data.labels)
    if len(tr.X) == 0 or len(va.X) == 0:
        raise DataError(
            f"window size {config.framing.window_size} leaves no training or validation frames"
        )
    log.info("frames: train=%d val=%d (skipped strokes %d/%d)",
             len(tr.X), len(va.X), tr.skipped_strokes, va.skipped_strokes)
    model = init_model(
        config.framing.input_dim, config.hidden_dims, len(data.labels),
        seed=config.seed, dropout_rate=config.dropout_rate, bn_epsilon=config.train.bn_epsilon,
    )
    train_config = dataclasses.replace(config.train, seed=config.seed)
    best, report = train(model, tr.X, tr.labels, va.X, va.labels, train_config, weights)
    return TrainResult(best, report, data, Checkpoint(best, stats, config.framing, data.user_ids))


def write_training_outputs(result: TrainResult, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / CHECKPOINT_FILE
    with open(ckpt, "w", encoding="utf-8", newline="\n") as fh:
        cp = result.checkpoint
        save_checkpoint(cp.model, cp.stats, cp.config, fh, cp.user_ids)
    with open(out / TRAINING_REPORT_FILE, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(result.report.to_csv())
    return ckpt


@dataclass
class EvalResult:
    report: metrics.EvalReport
    curves: dict[int, list[metrics.DetPoint]]
    stroke_scores: list[tuple[int, np.ndarray]]


def stroke_posteriors(
    checkpoint: Checkpoint, strokes: Sequence[Stroke], labels: dict[int, int]
) -> list[tuple[int, np.ndarray]]:
    """Window-fused posterior of every stroke long enough to frame."""
    frames = frame_strokes(strokes, checkpoint.config, checkpoint.stats, labels)
    if len(frames.X) == 0:
        return []
    probs = predict(checkpoint.model, frames.X)
    refs, fused = fusion.fuse_stroke_windows(probs, frames.stroke_refs)
    truth = {s.stroke_id: labels[s.user_id] for s in strokes}
    return [(truth[int(r)], f) for r, f in zip(refs, fused)]


def run_evaluation(
    records: Sequence[TouchRecord], checkpoint: Checkpoint, config: RunConfig
) -> EvalResult:
    check_framing(checkpoint.config, config.framing)
    data = prepare(records, config)
    if data.user_ids != list(checkpoint.user_ids):
        raise CheckpointMismatch(
            f"checkpoint users {checkpoint.user_ids} differ from data users {data.user_ids}"
        )
    scores = stroke_posteriors(checkpoint, data.split.test, data.labels)
    by_user: dict[int, list[np.ndarray]] = defaultdict(list)
    for user, vec in scores:
        by_user[user].append(vec)

    report = metrics.EvalReport(stroke_filter=config.strokes)
    curves: dict[int, list[metrics.DetPoint]] = {}
    for n in config.fuse:
        sampled = fusion.sample_fusion_groups(by_user, n, config.max_groups_per_user, config.seed)
        if not sampled.groups:
            raise DataError(f"no user has {n} test strokes to fuse")
        fused = [(u, fusion.fuse_strokes(group, n)) for u, group in sampled.groups]
        trials = fusion.build_verification_trials(fused, n_strokes=n)
        curve = metrics.det_curve(trials)
        curves[n] = curve
        report.rows.append(
            metrics.EvalRow(
                n_strokes=n,
                accuracy=metrics.accuracy(fused),
                eer=metrics.eer(curve),
                probes=len(fused),
                trials=len(trials),
                skipped_users=sampled.skipped_users,
                det_file=det_filename(n),
            )
        )
    return EvalResult(report, curves, scores)


def det_filename(n: int) -> str:
    return f"det_n{n:02d}.csv"


def write_eval_outputs(result: EvalResult, out_dir: str | os.PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for n, curve in result.curves.items():
        with open(out / det_filename(n), "w", encoding="utf-8", newline="\n") as fh:
            metrics.export_det(curve, fh)
    with open(out / EVAL_REPORT_FILE, "w", encoding="utf-8", newline="\n") as fh:
        metrics.export_report(result.report, fh)


def read_checkpoint(path: str | os.PathLike, expected: FramingConfig | None = None) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        return load_checkpoint(fh, expected)
