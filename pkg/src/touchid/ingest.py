"""Touch-record CSV ingestion, stroke segmentation, splits and class weights."""

from __future__ import annotations

import csv
import enum
import io
import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from typing import IO, Iterable, Mapping, NamedTuple, Sequence

MIN_STROKE_LENGTH = 5
MAX_SHORT_LENGTH = 12

CSV_COLUMNS = (
    "phone_id",
    "user_id",
    "doc_id",
    "timestamp",
    "action",
    "phone_orientation",
    "x",
    "y",
    "pressure",
    "area",
    "finger_orientation",
)
_INT_COLUMNS = frozenset({"phone_id", "user_id", "doc_id", "action", "phone_orientation"})


class ParseError(ValueError):
    """A CSV row could not be turned into a TouchRecord."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class SplitError(ValueError):
    """Raised when a stroke set cannot be split as requested."""

    def __init__(self, message: str, user_id: int | None = None) -> None:
        super().__init__(message)
        self.user_id = user_id


class Action(enum.IntEnum):
    DOWN = 0
    UP = 1
    MOVE = 2


class StrokeClass(str, enum.Enum):
    SHORT = "short"
    LONG = "long"


@dataclass(frozen=True)
class TouchRecord:
    phone_id: int
    user_id: int
    doc_id: int
    timestamp: float
    action: Action
    phone_orientation: int
    x: float
    y: float
    pressure: float
    area: float
    finger_orientation: float

    def value(self, attribute: str) -> float:
        return float(getattr(self, attribute))


@dataclass(frozen=True)
class Stroke:
    """One finger-down to finger-up run of records from a single user.

    ``category`` stays ``None`` until :func:`filter_and_classify` has seen
    the stroke. ``stroke_id`` is the stroke's position in the segmentation
    output and is used to trace windows back to their source.
    """

    stroke_id: int
    user_id: int
    phone_id: int
    doc_id: int
    records: tuple[TouchRecord, ...]
    category: StrokeClass | None = None

    @property
    def length(self) -> int:
        return len(self.records)

    def __len__(self) -> int:
        return len(self.records)


class Segmentation(NamedTuple):
    strokes: list[Stroke]
    dropped_records: int
    dropped_runs: int


@dataclass(frozen=True)
class DatasetSplit:
    train: list[Stroke]
    val: list[Stroke]
    test: list[Stroke]
    seed: int


def _parse_number(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line, f"column {column!r} is not numeric: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(line, f"column {column!r} is not finite: {text!r}")
    return value


def _looks_numeric(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _parse_row(row: Sequence[str], line: int) -> TouchRecord:
    if len(row) != len(CSV_COLUMNS):
        raise ParseError(line, f"expected {len(CSV_COLUMNS)} columns, got {len(row)}")
    fields: dict[str, float | int] = {}
    for column, text in zip(CSV_COLUMNS, row):
        value = _parse_number(text.strip(), column, line)
        if column in _INT_COLUMNS:
            if not value.is_integer():
                raise ParseError(line, f"column {column!r} must be an integer: {text!r}")
            fields[column] = int(value)
        else:
            fields[column] = value
    try:
        fields["action"] = Action(fields["action"])
    except ValueError:
        raise ParseError(line, f"action must be 0, 1 or 2, got {row[4]!r}") from None
    return TouchRecord(**fields)  # type: ignore[arg-type]


def parse_csv(stream: IO[str] | IO[bytes]) -> list[TouchRecord]:
    """Parse an 11-column touch CSV into records, in file order.

    A single header line is skipped when its first field is not numeric.
    Blank lines are ignored. Byte streams are decoded as UTF-8.
    """
    text = stream.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    records: list[TouchRecord] = []
    reader = csv.reader(io.StringIO(text))
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if line == 1 and not _looks_numeric(row[0].strip()):
            continue
        records.append(_parse_row(row, line))
    return records


def _format(value: float | int) -> str:
    if isinstance(value, int):
        return str(int(value))
    return repr(float(value))


def write_csv(records: Iterable[TouchRecord], stream: IO[str], header: bool = False) -> None:
    """Serialize records in the exact format :func:`parse_csv` reads."""
    if header:
        stream.write(",".join(CSV_COLUMNS) + "\n")
    for rec in records:
        stream.write(",".join(_format(getattr(rec, col)) for col in CSV_COLUMNS) + "\n")


def segment_strokes(records: Sequence[TouchRecord]) -> Segmentation:
    """Group records by (user, phone, document), sort by time and cut strokes.

    A stroke is a maximal Down, Move*, Up run. A Down arriving while a run is
    still open discards the open run; Move/Up records outside a run and runs
    left open at the end of a group are discarded as well. Groups are emitted
    in order of first appearance.
    """
    groups: dict[tuple[int, int, int], list[TouchRecord]] = {}
    for rec in records:
        groups.setdefault((rec.user_id, rec.phone_id, rec.doc_id), []).append(rec)

    strokes: list[Stroke] = []
    dropped_records = 0
    dropped_runs = 0
    for (user_id, phone_id, doc_id), group in groups.items():
        group = sorted(group, key=lambda r: r.timestamp)
        run: list[TouchRecord] | None = None
        for rec in group:
            if rec.action == Action.DOWN:
                if run is not None:
                    dropped_records += len(run)
                    dropped_runs += 1
                run = [rec]
            elif run is None:
                dropped_records += 1
                dropped_runs += 1
            else:
                run.append(rec)
                if rec.action == Action.UP:
                    strokes.append(
                        Stroke(len(strokes), user_id, phone_id, doc_id, tuple(run))
                    )
                    run = None
        if run is not None:
            dropped_records += len(run)
            dropped_runs += 1
    return Segmentation(strokes, dropped_records, dropped_runs)


def classify_length(length: int) -> StrokeClass | None:
    if length < MIN_STROKE_LENGTH:
        return None
    return StrokeClass.SHORT if length <= MAX_SHORT_LENGTH else StrokeClass.LONG


def filter_and_classify(strokes: Iterable[Stroke]) -> list[Stroke]:
    """Drop strokes shorter than 5 records and tag the rest Short or Long."""
    kept = []
    for stroke in strokes:
        category = classify_length(stroke.length)
        if category is None:
            continue
        kept.append(stroke if stroke.category is category else replace(stroke, category=category))
    return kept


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(
    strokes: Sequence[Stroke],
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> DatasetSplit:
    """Split strokes per user into train/val/test parts.

    Each user's strokes are shuffled with an RNG keyed on ``(seed, user_id)``.
    Validation and test sizes are the per-user counts times their ratio,
    rounded to nearest; the remainder goes to training. Output lists keep
    users in ascending id order.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    by_user: dict[int, list[Stroke]] = defaultdict(list)
    for stroke in strokes:
        by_user[stroke.user_id].append(stroke)
    if not by_user:
        raise SplitError("no strokes to split")

    train: list[Stroke] = []
    val: list[Stroke] = []
    test: list[Stroke] = []
    for user_id in sorted(by_user):
        items = list(by_user[user_id])
        if len(items) < MIN_STROKE_LENGTH:
            raise SplitError(
                f"user {user_id} has {len(items)} strokes; at least {MIN_STROKE_LENGTH} needed",
                user_id=user_id,
            )
        random.Random(f"{seed}:{user_id}").shuffle(items)
        n = len(items)
        n_val = _round_half_up(ratios[1] * n)
        n_test = _round_half_up(ratios[2] * n)
        n_train = n - n_val - n_test
        train.extend(items[:n_train])
        val.extend(items[n_train : n_train + n_val])
        test.extend(items[n_train + n_val :])
    return DatasetSplit(train, val, test, seed)


def compute_class_weights(
    train: Sequence[Stroke], users: Iterable[int] | None = None
) -> dict[int, float]:
    """Inverse-frequency weights ``N_total / (K * N_u)`` keyed by user id.

    ``users`` lists every user the model knows about; any of them missing
    from ``train`` is an error. Defaults to the users present in ``train``.
    """
    if not train:
        raise ValueError("training set is empty")
    counts = Counter(stroke.user_id for stroke in train)
    known = sorted(set(users)) if users is not None else sorted(counts)
    missing = [u for u in known if counts[u] == 0]
    if missing:
        raise ValueError(f"users without training strokes: {missing}")
    total = sum(counts[u] for u in known)
    k = len(known)
    return {u: total / (k * counts[u]) for u in known}


def label_map(user_ids: Iterable[int]) -> dict[int, int]:
    """Map user ids to contiguous class indices in ascending id order."""
    return {u: i for i, u in enumerate(sorted(set(user_ids)))}


def stroke_counts(strokes: Iterable[Stroke]) -> Mapping[int, int]:
    return Counter(s.user_id for s in strokes)
