"""Identification accuracy, FAR/FRR, DET curves and EER."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .fusion import TrialSet


class DegenerateTrialsError(ValueError):
    """Trial set lacks the genuine or impostor side needed for a rate."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class DetPoint:
    threshold: float
    far: float
    frr: float


@dataclass(frozen=True)
class EvalRow:
    n_strokes: int
    accuracy: float
    eer: float
    probes: int
    trials: int
    skipped_users: int = 0
    det_file: str = ""


@dataclass
class EvalReport:
    stroke_filter: str
    rows: list[EvalRow] = field(default_factory=list)

    def row(self, n: int) -> EvalRow:
        for r in self.rows:
            if r.n_strokes == n:
                return r
        raise KeyError(n)


def accuracy(fused: Sequence[tuple[int, np.ndarray]]) -> float:
    """Fraction of probes whose top-scoring user is the true user.

    ``np.argmax`` returns the first maximum, so ties go to the lowest index.
    """
    if not fused:
        raise ValueError("accuracy of an empty probe set")
    hits = sum(int(np.argmax(scores)) == int(y) for y, scores in fused)
    return hits / len(fused)


def confusion_at_threshold(trials: TrialSet, threshold: float) -> ConfusionCounts:
    """Accept a trial when its score is >= threshold."""
    accepted = trials.scores >= threshold
    g = trials.genuine
    return ConfusionCounts(
        tp=int(np.sum(accepted & g)),
        fp=int(np.sum(accepted & ~g)),
        tn=int(np.sum(~accepted & ~g)),
        fn=int(np.sum(~accepted & g)),
    )


def far(c: ConfusionCounts) -> float:
    if c.fp + c.tn == 0:
        raise DegenerateTrialsError("FAR undefined without impostor trials")
    return c.fp / (c.fp + c.tn)


def frr(c: ConfusionCounts) -> float:
    if c.fn + c.tp == 0:
        raise DegenerateTrialsError("FRR undefined without genuine trials")
    return c.fn / (c.fn + c.tp)


def det_curve(trials: TrialSet) -> list[DetPoint]:
    """FAR/FRR at every distinct score plus one sentinel on each side.

    Thresholds ascend, so FAR is non-increasing and FRR non-decreasing
    along the returned list.
    """
    gen = np.sort(trials.genuine_scores)
    imp = np.sort(trials.impostor_scores)
    if len(gen) == 0 or len(imp) == 0:
        raise DegenerateTrialsError("DET curve needs genuine and impostor trials")
    unique = np.unique(trials.scores)
    thresholds = np.concatenate(
        [[np.nextafter(unique[0], -np.inf)], unique, [np.nextafter(unique[-1], np.inf)]]
    )
    fn = np.searchsorted(gen, thresholds, side="left")
    fp = len(imp) - np.searchsorted(imp, thresholds, side="left")
    far_v = fp / len(imp)
    frr_v = fn / len(gen)
    return [DetPoint(float(t), float(a), float(r)) for t, a, r in zip(thresholds, far_v, frr_v)]


def eer(curve: Sequence[DetPoint]) -> float:
    """Rate where FAR and FRR meet.

    Returns the common value of the first point with FAR == FRR; otherwise
    both rates are interpolated linearly between the two adjacent points
    where FAR - FRR changes sign and their crossing value is returned.
    """
    if not curve:
        raise ValueError("empty DET curve")
    for i, p in enumerate(curve):
        d = p.far - p.frr
        if d == 0:
            return p.far
        if d < 0:
            if i == 0:
                # Curve starts past the crossing; nothing to interpolate from.
                return (p.far + p.frr) / 2
            q = curve[i - 1]
            d0 = q.far - q.frr
            alpha = d0 / (d0 - d)
            return q.far + alpha * (p.far - q.far)
    last = curve[-1]
    return (last.far + last.frr) / 2


def export_det(curve: Iterable[DetPoint], stream: IO[str]) -> None:
    stream.write("threshold,far,frr\n")
    for p in curve:
        stream.write(f"{p.threshold!r},{p.far!r},{p.frr!r}\n")


def read_det(stream: IO[str]) -> list[DetPoint]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header != ["threshold", "far", "frr"]:
        raise ValueError(f"unexpected DET header {header}")
    return [DetPoint(float(t), float(a), float(r)) for t, a, r in reader]


def export_report(report: EvalReport, stream: IO[str]) -> None:
    """Text table of EER and accuracy per number of fused strokes."""
    stream.write(f"stroke class: {report.stroke_filter}\n")
    stream.write(f"{'strokes':>7}  {'EER[%]':>8}  {'accuracy[%]':>11}  {'probes':>7}  {'trials':>8}\n")
    for r in sorted(report.rows, key=lambda r: r.n_strokes):
        stream.write(
            f"{r.n_strokes:>7d}  {100 * r.eer:>8.4f}  {100 * r.accuracy:>11.4f}  "
            f"{r.probes:>7d}  {r.trials:>8d}\n"
        )
