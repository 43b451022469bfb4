"""Attribute normalization and sliding-window framing of strokes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .ingest import Stroke

DEFAULT_ATTRIBUTES = (
    "action",
    "phone_orientation",
    "x",
    "y",
    "pressure",
    "area",
    "finger_orientation",
)
# Never fed to the network: identifiers, time, and the label itself.
EXCLUDED_ATTRIBUTES = frozenset({"phone_id", "doc_id", "timestamp", "user_id"})
_ALLOWED_ATTRIBUTES = frozenset(DEFAULT_ATTRIBUTES)
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class FramingConfig:
    window_size: int = 5
    stride: int = 1
    attributes: tuple[str, ...] = DEFAULT_ATTRIBUTES

    def __post_init__(self) -> None:
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if self.window_size < 2:
            raise ValueError(f"window_size must be >= 2, got {self.window_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not self.attributes:
            raise ValueError("attribute list is empty")
        if len(set(self.attributes)) != len(self.attributes):
            raise ValueError(f"duplicate attributes in {self.attributes}")
        for name in self.attributes:
            if name in EXCLUDED_ATTRIBUTES:
                raise ValueError(f"attribute {name!r} may not be used as a network input")
            if name not in _ALLOWED_ATTRIBUTES:
                raise ValueError(f"unknown attribute {name!r}")

    @property
    def input_dim(self) -> int:
        return len(self.attributes) * self.window_size


@dataclass(frozen=True)
class NormalizationStats:
    attributes: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    @property
    def divisor(self) -> np.ndarray:
        return np.where(self.std < STD_FLOOR, 1.0, self.std)


@dataclass(frozen=True)
class WindowFrame:
    vector: np.ndarray
    label: int
    stroke_ref: int


class FrameSet(NamedTuple):
    """Stacked frames ready for the network."""

    X: np.ndarray
    labels: np.ndarray
    stroke_refs: np.ndarray
    skipped_strokes: int


def stroke_matrix(stroke: Stroke, attributes: Sequence[str]) -> np.ndarray:
    """Raw ``(length, n_attributes)`` matrix of a stroke."""
    return np.array(
        [[rec.value(a) for a in attributes] for rec in stroke.records], dtype=np.float64
    ).reshape(stroke.length, len(attributes))


def fit_normalizer(train: Sequence[Stroke], config: FramingConfig) -> NormalizationStats:
    """Population mean/std of every configured attribute over all training records."""
    if not train:
        raise ValueError("cannot fit normalizer on an empty training set")
    data = np.concatenate([stroke_matrix(s, config.attributes) for s in train])
    mean = data.mean(axis=0)
    std = np.sqrt(((data - mean) ** 2).mean(axis=0))
    return NormalizationStats(tuple(config.attributes), mean, std)


def normalize(matrix: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return (matrix - stats.mean) / stats.divisor


def window_offsets(length: int, window_size: int, stride: int) -> range:
    if length < window_size:
        return range(0)
    return range(0, length - window_size + 1, stride)


def frame_matrix(matrix: np.ndarray, config: FramingConfig) -> np.ndarray:
    """Record-major flattened windows of an already normalized stroke matrix."""
    length, n_attr = matrix.shape
    w = config.window_size
    if length < w:
        return np.empty((0, n_attr * w))
    view = np.lib.stride_tricks.sliding_window_view(matrix, w, axis=0)[:: config.stride]
    # view is (n_frames, n_attr, w); record-major means (w, n_attr) order.
    return view.transpose(0, 2, 1).reshape(view.shape[0], n_attr * w)


def _check_stats(config: FramingConfig, stats: NormalizationStats) -> None:
    if tuple(stats.attributes) != tuple(config.attributes):
        raise ValueError(
            f"normalizer attributes {stats.attributes} do not match config {config.attributes}"
        )


def make_windows(
    stroke: Stroke, config: FramingConfig, stats: NormalizationStats, label: int = -1
) -> list[WindowFrame]:
    """Cut one stroke into normalized, flattened windows.

    Returns an empty list when the stroke is shorter than the window.
    """
    _check_stats(config, stats)
    frames = frame_matrix(normalize(stroke_matrix(stroke, config.attributes), stats), config)
    return [WindowFrame(row.copy(), label, stroke.stroke_id) for row in frames]


def frame_strokes(
    strokes: Sequence[Stroke],
    config: FramingConfig,
    stats: NormalizationStats,
    labels: Mapping[int, int],
) -> FrameSet:
    """Window every stroke and stack the results.

    ``labels`` maps user id to class index. Strokes shorter than the window
    contribute nothing and are counted in ``skipped_strokes``.
    """
    _check_stats(config, stats)
    blocks, ys, refs = [], [], []
    skipped = 0
    for stroke in strokes:
        frames = frame_matrix(normalize(stroke_matrix(stroke, config.attributes), stats), config)
        if len(frames) == 0:
            skipped += 1
            continue
        blocks.append(frames)
        ys.append(np.full(len(frames), labels[stroke.user_id], dtype=np.int64))
        refs.append(np.full(len(frames), stroke.stroke_id, dtype=np.int64))
    if not blocks:
        return FrameSet(
            np.empty((0, config.input_dim)),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            skipped,
        )
    return FrameSet(np.concatenate(blocks), np.concatenate(ys), np.concatenate(refs), skipped)
