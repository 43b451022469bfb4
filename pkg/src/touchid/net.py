"""Deep multilayer perceptron implemented directly on numpy.

Layer layout (three hidden layers)::

    x -> affine -> batch-norm -> ReLU -> dropout      (hidden 1)
      -> affine -> ReLU                               (hidden 2)
      -> affine -> ReLU                               (hidden 3)
      -> affine -> softmax                            (output, one unit per user)

The first affine layer carries no bias of its own; batch-norm's ``beta``
takes that role, and a bias there would have an identically zero gradient.
"""

from __future__ import annotations

import copy
import enum
import logging
from dataclasses import dataclass, field
from typing import IO, NamedTuple, Sequence

import numpy as np

from .framing import FramingConfig, NormalizationStats

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "touchid-mlp-checkpoint"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "gamma", "beta", "W2", "b2", "W3", "b3", "W4", "b4")
BUFFER_NAMES = ("running_mean", "running_var")


class Mode(enum.Enum):
    TRAIN = "train"
    INFER = "infer"


class NonFiniteError(FloatingPointError):
    def __init__(self, layer: str) -> None:
        super().__init__(f"non-finite activation in layer {layer!r}")
        self.layer = layer


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, reason: str = "non-finite loss") -> None:
        super().__init__(f"training diverged at epoch {epoch}: {reason}")
        self.epoch = epoch


class CheckpointError(ValueError):
    """Checkpoint stream is malformed, truncated or from another version."""


class CheckpointMismatch(CheckpointError):
    """Checkpoint framing does not match the configuration it is used with."""


@dataclass
class MlpModel:
    input_dim: int
    hidden_dims: tuple[int, int, int]
    output_dim: int
    params: dict[str, np.ndarray]
    running_mean: np.ndarray
    running_var: np.ndarray
    dropout_rate: float = 0.5
    bn_epsilon: float = 1e-5

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    bn_momentum: float = 0.9
    bn_epsilon: float = 1e-5

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.bn_momentum < 1:
            raise ValueError("bn_momentum must be in (0, 1)")
        if not self.bn_epsilon > 0:
            raise ValueError("bn_epsilon must be > 0")


@dataclass
class TrainingReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_accuracy,best"]
        for i, (tl, vl, va) in enumerate(zip(self.train_loss, self.val_loss, self.val_accuracy)):
            lines.append(f"{i},{tl!r},{vl!r},{va!r},{int(i == self.best_epoch)}")
        return "\n".join(lines) + "\n"


def init_model(
    input_dim: int,
    hidden_dims: Sequence[int] = (512, 256, 128),
    output_dim: int = 2,
    seed: int = 0,
    dropout_rate: float = 0.5,
    bn_epsilon: float = 1e-5,
) -> MlpModel:
    """He-normal weights, zero biases, identity batch-norm, deterministic per seed."""
    hidden = tuple(int(h) for h in hidden_dims)
    if len(hidden) != 3:
        raise ValueError(f"exactly 3 hidden layers required, got {len(hidden)}")
    dims = (int(input_dim), *hidden, int(output_dim))
    if any(d <= 0 for d in dims):
        raise ValueError(f"all layer sizes must be positive, got {dims}")
    if not 0 <= dropout_rate < 1:
        raise ValueError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for i in range(4):
        fan_in, fan_out = dims[i], dims[i + 1]
        params[f"W{i + 1}"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        if i > 0:
            params[f"b{i + 1}"] = np.zeros(fan_out)
    params["gamma"] = np.ones(hidden[0])
    params["beta"] = np.zeros(hidden[0])
    params = {name: params[name] for name in PARAM_NAMES}
    return MlpModel(
        input_dim=dims[0],
        hidden_dims=hidden,  # type: ignore[arg-type]
        output_dim=dims[-1],
        params=params,
        running_mean=np.zeros(hidden[0]),
        running_var=np.ones(hidden[0]),
        dropout_rate=float(dropout_rate),
        bn_epsilon=float(bn_epsilon),
    )


def _check(name: str, a: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(name)
    return a


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward(
    model: MlpModel,
    X: np.ndarray,
    mode: Mode,
    rng: np.random.Generator | None,
    momentum: float,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"expected batch of shape (n, {model.input_dim}), got {X.shape}")
    p = model.params
    cache: dict[str, np.ndarray] = {"x": X}

    z1 = _check("hidden1.affine", X @ p["W1"])
    if mode is Mode.TRAIN:
        mu = z1.mean(axis=0)
        var = z1.var(axis=0)
        model.running_mean = momentum * model.running_mean + (1 - momentum) * mu
        model.running_var = momentum * model.running_var + (1 - momentum) * var
    else:
        mu, var = model.running_mean, model.running_var
    inv_std = 1.0 / np.sqrt(var + model.bn_epsilon)
    xhat = (z1 - mu) * inv_std
    a1 = np.maximum(_check("hidden1.batchnorm", p["gamma"] * xhat + p["beta"]), 0.0)
    if mode is Mode.TRAIN and model.dropout_rate > 0:
        if rng is None:
            raise ValueError("Train-mode forward with dropout needs an rng")
        keep = 1.0 - model.dropout_rate
        mask = (rng.random(a1.shape) < keep) / keep
        h1 = a1 * mask
    else:
        mask = None
        h1 = a1
    cache.update(xhat=xhat, inv_std=inv_std, a1=a1, h1=h1)
    if mask is not None:
        cache["mask"] = mask

    a2 = np.maximum(_check("hidden2", h1 @ p["W2"] + p["b2"]), 0.0)
    a3 = np.maximum(_check("hidden3", a2 @ p["W3"] + p["b3"]), 0.0)
    logits = _check("output", a3 @ p["W4"] + p["b4"])
    cache.update(a2=a2, a3=a3)
    return logits, cache


def forward(
    model: MlpModel,
    X: np.ndarray,
    mode: Mode = Mode.INFER,
    rng: np.random.Generator | None = None,
    momentum: float = 0.9,
) -> np.ndarray:
    """Per-user probabilities, one row per input row.

    Train mode normalizes with batch statistics, folds them into the running
    statistics and applies dropout (needs ``rng``). Infer mode is read-only.
    """
    logits, _ = _forward(model, X, mode, rng, momentum)
    return np.exp(_log_softmax(logits))


def predict(model: MlpModel, X: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Infer-mode probabilities computed in chunks."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        return np.empty((0, model.output_dim))
    return np.concatenate(
        [forward(model, X[i : i + batch_size]) for i in range(0, len(X), batch_size)]
    )


def weighted_nll(
    log_probs: np.ndarray, labels: np.ndarray, class_weights: np.ndarray
) -> tuple[float, np.ndarray]:
    """Class-weighted mean negative log-likelihood and the per-sample weights."""
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    nll = -log_probs[np.arange(len(labels)), labels]
    return float((w * nll).sum() / w.sum()), w


def loss_and_grad(
    model: MlpModel,
    X: np.ndarray,
    labels: np.ndarray,
    class_weights: np.ndarray | None = None,
    mode: Mode = Mode.TRAIN,
    rng: np.random.Generator | None = None,
    momentum: float = 0.9,
) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted cross-entropy and its gradient for every entry of ``model.params``.

    ``class_weights`` is indexed by class index; ``None`` means uniform.
    The dropout mask is drawn once and reused for the backward pass.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(X),):
        raise ValueError("labels must be a vector with one entry per row")
    if labels.size and (labels.min() < 0 or labels.max() >= model.output_dim):
        raise ValueError("label out of range")
    if class_weights is None:
        class_weights = np.ones(model.output_dim)
    p = model.params
    logits, c = _forward(model, X, mode, rng, momentum)
    log_probs = _log_softmax(logits)
    loss, w = weighted_nll(log_probs, labels, class_weights)

    n = len(labels)
    d_logits = np.exp(log_probs)
    d_logits[np.arange(n), labels] -= 1.0
    d_logits *= (w / w.sum())[:, None]

    g: dict[str, np.ndarray] = {}
    g["W4"] = c["a3"].T @ d_logits
    g["b4"] = d_logits.sum(axis=0)
    d_a3 = (d_logits @ p["W4"].T) * (c["a3"] > 0)
    g["W3"] = c["a2"].T @ d_a3
    g["b3"] = d_a3.sum(axis=0)
    d_a2 = (d_a3 @ p["W3"].T) * (c["a2"] > 0)
    g["W2"] = c["h1"].T @ d_a2
    g["b2"] = d_a2.sum(axis=0)
    d_h1 = d_a2 @ p["W2"].T
    d_a1 = d_h1 * c["mask"] if "mask" in c else d_h1
    d_bn = d_a1 * (c["a1"] > 0)
    xhat = c["xhat"]
    g["gamma"] = (d_bn * xhat).sum(axis=0)
    g["beta"] = d_bn.sum(axis=0)
    d_xhat = d_bn * p["gamma"]
    if mode is Mode.TRAIN:
        d_z1 = c["inv_std"] / n * (
            n * d_xhat - d_xhat.sum(axis=0) - xhat * (d_xhat * xhat).sum(axis=0)
        )
    else:
        d_z1 = d_xhat * c["inv_std"]
    g["W1"] = c["x"].T @ d_z1
    return loss, {name: g[name] for name in PARAM_NAMES}


def evaluate(
    model: MlpModel, X: np.ndarray, labels: np.ndarray, class_weights: np.ndarray
) -> tuple[float, float]:
    """Infer-mode weighted loss and window accuracy."""
    probs = predict(model, X)
    with np.errstate(divide="ignore"):
        log_probs = np.log(np.maximum(probs, np.finfo(np.float64).tiny))
    loss, _ = weighted_nll(log_probs, labels, class_weights)
    accuracy = float(np.mean(probs.argmax(axis=1) == labels))
    return loss, accuracy


def train(
    model: MlpModel,
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    config: TrainConfig,
    class_weights: np.ndarray | None = None,
) -> tuple[MlpModel, TrainingReport]:
    """Mini-batch SGD; returns the parameters of the best validation-loss epoch.

    The input model is not modified. Batches of a single row are skipped
    because batch statistics are undefined for them.
    """
    if len(X_train) == 0 or len(X_val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if class_weights is None:
        class_weights = np.ones(model.output_dim)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    work = model.copy()
    work.bn_epsilon = config.bn_epsilon
    rng = np.random.default_rng(config.seed)
    y_train = np.asarray(y_train, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    report = TrainingReport()
    best: MlpModel | None = None
    lr = config.learning_rate

    for epoch in range(config.epochs):
        order = rng.permutation(len(X_train))
        loss_sum = 0.0
        weight_sum = 0.0
        try:
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                if len(idx) < 2:
                    continue
                loss, grads = loss_and_grad(
                    work, X_train[idx], y_train[idx], class_weights,
                    Mode.TRAIN, rng, config.bn_momentum,
                )
                if not np.isfinite(loss):
                    raise TrainingDiverged(epoch)
                for name, grad in grads.items():
                    work.params[name] -= lr * grad
                bw = class_weights[y_train[idx]].sum()
                loss_sum += loss * bw
                weight_sum += bw
            val_loss, val_acc = evaluate(work, X_val, y_val, class_weights)
        except NonFiniteError as exc:
            raise TrainingDiverged(epoch, str(exc)) from exc
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch, "non-finite validation loss")
        train_loss = loss_sum / weight_sum if weight_sum else float("nan")
        report.train_loss.append(float(train_loss))
        report.val_loss.append(val_loss)
        report.val_accuracy.append(val_acc)
        if best is None or val_loss < report.val_loss[report.best_epoch]:
            report.best_epoch = epoch
            best = work.copy()
        log.info(
            "epoch %d train_loss=%.4f val_loss=%.4f val_acc=%.4f",
            epoch, train_loss, val_loss, val_acc,
        )
    assert best is not None
    return best, report


# -- checkpoint I/O ---------------------------------------------------------


class Checkpoint(NamedTuple):
    model: MlpModel
    stats: NormalizationStats
    config: FramingConfig
    user_ids: list[int]


def _floats(values: np.ndarray) -> str:
    return " ".join(repr(v) for v in np.asarray(values, dtype=np.float64).ravel().tolist())


def save_checkpoint(
    model: MlpModel,
    stats: NormalizationStats,
    config: FramingConfig,
    stream: IO[str],
    user_ids: Sequence[int] | None = None,
) -> None:
    """Write a versioned plain-text checkpoint; floats use shortest round-trip repr."""
    if tuple(stats.attributes) != tuple(config.attributes):
        raise CheckpointMismatch("normalization stats and framing config disagree on attributes")
    if config.input_dim != model.input_dim:
        raise CheckpointMismatch(
            f"framing yields {config.input_dim} inputs but the model takes {model.input_dim}"
        )
    users = list(user_ids) if user_ids is not None else list(range(model.output_dim))
    if len(users) != model.output_dim:
        raise CheckpointMismatch("user id list length differs from the output layer size")
    out = [
        CHECKPOINT_MAGIC,
        f"version {CHECKPOINT_VERSION}",
        "attributes " + " ".join(config.attributes),
        f"window_size {config.window_size}",
        f"stride {config.stride}",
        f"input_dim {model.input_dim}",
        "hidden_dims " + " ".join(str(h) for h in model.hidden_dims),
        f"output_dim {model.output_dim}",
        f"dropout_rate {model.dropout_rate!r}",
        f"bn_epsilon {model.bn_epsilon!r}",
        "users " + " ".join(str(int(u)) for u in users),
        "norm_mean " + _floats(stats.mean),
        "norm_std " + _floats(stats.std),
    ]
    stream.write("\n".join(out) + "\n")
    arrays = {**model.params, "running_mean": model.running_mean, "running_var": model.running_var}
    for name in (*PARAM_NAMES, *BUFFER_NAMES):
        a = np.atleast_2d(arrays[name])
        stream.write(f"array {name} {a.shape[0]} {a.shape[1]}\n")
        for row in a:
            stream.write(_floats(row) + "\n")
    stream.write("end\n")


class _Lines:
    def __init__(self, stream: IO[str]) -> None:
        self._it = iter(stream.read().splitlines())
        self.lineno = 0

    def next(self) -> str:
        try:
            line = next(self._it)
        except StopIteration:
            raise CheckpointError(f"checkpoint truncated after line {self.lineno}") from None
        self.lineno += 1
        return line

    def field(self, key: str) -> list[str]:
        parts = self.next().split(" ")
        if parts[0] != key:
            raise CheckpointError(f"line {self.lineno}: expected {key!r}, got {parts[0]!r}")
        return [p for p in parts[1:] if p]


def _parse_floats(tokens: list[str], count: int, where: str) -> np.ndarray:
    if len(tokens) != count:
        raise CheckpointError(f"{where}: expected {count} values, got {len(tokens)}")
    try:
        return np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise CheckpointError(f"{where}: {exc}") from None


def load_checkpoint(stream: IO[str], expected: FramingConfig | None = None) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    When ``expected`` is given, its attribute list, window size and stride
    must match the checkpoint or :class:`CheckpointMismatch` is raised.
    """
    lines = _Lines(stream)
    if lines.next() != CHECKPOINT_MAGIC:
        raise CheckpointError("not a touchid checkpoint")
    try:
        version = int(lines.field("version")[0])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        attributes = tuple(lines.field("attributes"))
        window_size = int(lines.field("window_size")[0])
        stride = int(lines.field("stride")[0])
        input_dim = int(lines.field("input_dim")[0])
        hidden = tuple(int(h) for h in lines.field("hidden_dims"))
        output_dim = int(lines.field("output_dim")[0])
        dropout_rate = float(lines.field("dropout_rate")[0])
        bn_epsilon = float(lines.field("bn_epsilon")[0])
        users = [int(u) for u in lines.field("users")]
    except (IndexError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"line {lines.lineno}: malformed header ({exc})") from None
    try:
        config = FramingConfig(window_size, stride, attributes)
    except ValueError as exc:
        raise CheckpointError(f"invalid framing in checkpoint: {exc}") from None
    if len(hidden) != 3 or config.input_dim != input_dim or len(users) != output_dim:
        raise CheckpointError("checkpoint header dimensions are inconsistent")
    n_attr = len(attributes)
    mean = _parse_floats(lines.field("norm_mean"), n_attr, "norm_mean")
    std = _parse_floats(lines.field("norm_std"), n_attr, "norm_std")

    dims = (input_dim, *hidden, output_dim)
    shapes = {
        "W1": (dims[0], dims[1]),
        "gamma": (1, dims[1]),
        "beta": (1, dims[1]),
        "running_mean": (1, dims[1]),
        "running_var": (1, dims[1]),
    }
    for i in (2, 3, 4):
        shapes[f"W{i}"] = (dims[i - 1], dims[i])
        shapes[f"b{i}"] = (1, dims[i])
    arrays: dict[str, np.ndarray] = {}
    for name in (*PARAM_NAMES, *BUFFER_NAMES):
        head = lines.field("array")
        rows, cols = shapes[name]
        if head != [name, str(rows), str(cols)]:
            raise CheckpointError(
                f"line {lines.lineno}: expected array {name} {rows}x{cols}, got {' '.join(head)}"
            )
        data = np.empty((rows, cols))
        for r in range(rows):
            data[r] = _parse_floats(lines.next().split(), cols, f"{name} row {r}")
        arrays[name] = data if name.startswith("W") else data[0]
    if lines.next() != "end":
        raise CheckpointError("missing end marker")

    model = MlpModel(
        input_dim=input_dim,
        hidden_dims=hidden,  # type: ignore[arg-type]
        output_dim=output_dim,
        params={name: arrays[name] for name in PARAM_NAMES},
        running_mean=arrays["running_mean"],
        running_var=arrays["running_var"],
        dropout_rate=dropout_rate,
        bn_epsilon=bn_epsilon,
    )
    if expected is not None:
        check_framing(config, expected)
    return Checkpoint(model, NormalizationStats(attributes, mean, std), config, users)


def check_framing(saved: FramingConfig, expected: FramingConfig) -> None:
    if tuple(saved.attributes) != tuple(expected.attributes):
        raise CheckpointMismatch(
            f"checkpoint attributes {list(saved.attributes)} != config {list(expected.attributes)}"
        )
    if (saved.window_size, saved.stride) != (expected.window_size, expected.stride):
        raise CheckpointMismatch(
            f"checkpoint window/stride ({saved.window_size}, {saved.stride}) != "
            f"config ({expected.window_size}, {expected.stride})"
        )
