"""Score-level fusion and verification-trial construction.

Window posteriors of one stroke are combined into a stroke score, and
stroke scores of the same user into a multi-stroke score, both with the
normalized geometric mean (mean of log-posteriors, renormalized).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Hashable, Mapping, NamedTuple, Sequence, TypeVar

import numpy as np

PROB_FLOOR = 1e-12

T = TypeVar("T")


def geometric_fuse(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError("need a non-empty (n, K) stack of score vectors")
    log_mean = np.log(np.maximum(scores, PROB_FLOOR)).mean(axis=0)
    # Shift before exponentiating; the renormalization cancels it.
    fused = np.exp(log_mean - log_mean.max())
    return fused / fused.sum()


def fuse_windows(window_scores: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Fuse the window posteriors of one stroke into a stroke posterior."""
    return geometric_fuse(np.asarray(window_scores, dtype=np.float64))


def fuse_strokes(stroke_scores: Sequence[np.ndarray] | np.ndarray, n: int) -> np.ndarray:
    """Fuse exactly ``n`` stroke posteriors of one user."""
    stroke_scores = np.asarray(stroke_scores, dtype=np.float64)
    if len(stroke_scores) != n:
        raise ValueError(f"expected {n} stroke score vectors, got {len(stroke_scores)}")
    return geometric_fuse(stroke_scores)


def fuse_stroke_windows(
    window_probs: np.ndarray, stroke_refs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Fuse window rows sharing a stroke reference.

    Returns the stroke references in order of first appearance and the
    matching ``(n_strokes, K)`` fused posteriors.
    """
    refs, first, inverse = np.unique(stroke_refs, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    logs = np.log(np.maximum(window_probs, PROB_FLOOR))
    sums = np.zeros((len(refs), window_probs.shape[1]))
    np.add.at(sums, inverse, logs)
    counts = np.bincount(inverse, minlength=len(refs))[:, None]
    log_mean = sums / counts
    fused = np.exp(log_mean - log_mean.max(axis=1, keepdims=True))
    fused /= fused.sum(axis=1, keepdims=True)
    return refs[order], fused[order]


class FusionGroups(NamedTuple):
    groups: list[tuple[Hashable, list]]
    skipped_users: int


def sample_fusion_groups(
    strokes_by_user: Mapping[Hashable, Sequence[T]],
    n: int,
    max_groups_per_user: int | None = None,
    seed: int = 0,
) -> FusionGroups:
    """Seeded disjoint groups of ``n`` items per user.

    Each user's items are shuffled with an RNG keyed on ``(seed, user, n)``
    and cut into ``len // n`` consecutive groups, capped at
    ``max_groups_per_user``. Users with fewer than ``n`` items are skipped.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    groups: list[tuple[Hashable, list]] = []
    skipped = 0
    for user in sorted(strokes_by_user):
        items = list(strokes_by_user[user])
        count = len(items) // n
        if max_groups_per_user is not None:
            count = min(count, max_groups_per_user)
        if count == 0:
            skipped += 1
            continue
        random.Random(f"{seed}:{user}:{n}").shuffle(items)
        groups.extend((user, items[i * n : (i + 1) * n]) for i in range(count))
    return FusionGroups(groups, skipped)


@dataclass(frozen=True)
class TrialSet:
    """Verification trials, stored column-wise."""

    claimed: np.ndarray
    scores: np.ndarray
    genuine: np.ndarray
    n_strokes: int = 1

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def genuine_scores(self) -> np.ndarray:
        return self.scores[self.genuine]

    @property
    def impostor_scores(self) -> np.ndarray:
        return self.scores[~self.genuine]

    @classmethod
    def from_scores(cls, genuine: Sequence[float], impostor: Sequence[float], n_strokes: int = 1):
        g = np.asarray(genuine, dtype=np.float64)
        i = np.asarray(impostor, dtype=np.float64)
        return cls(
            claimed=np.full(len(g) + len(i), -1, dtype=np.int64),
            scores=np.concatenate([g, i]),
            genuine=np.concatenate([np.ones(len(g), bool), np.zeros(len(i), bool)]),
            n_strokes=n_strokes,
        )


def build_verification_trials(
    fused: Sequence[tuple[int, np.ndarray]], n_strokes: int = 1
) -> TrialSet:
    """One trial per (probe, claimed user): the posterior of the claim is the score."""
    if not fused:
        raise ValueError("no fused probes")
    truth = np.array([int(y) for y, _ in fused], dtype=np.int64)
    scores = np.stack([np.asarray(s, dtype=np.float64) for _, s in fused])
    n_probes, k = scores.shape
    claimed = np.tile(np.arange(k), n_probes)
    return TrialSet(
        claimed=claimed,
        scores=scores.ravel(),
        genuine=claimed == np.repeat(truth, k),
        n_strokes=n_strokes,
    )
