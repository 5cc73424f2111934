"""SGD training loop, evaluation and the step-count study.

Purpose
- Train a `Network` with plain SGD at batch size 1: one step presents one sample and
  updates immediately. Samples are drawn by cycling a seeded per-epoch shuffle.
- Support both schedules: a fixed number of steps, or a number of full passes (epochs)
  over the train split.
- Emit (train, val) `MetricsRecord` rows every `eval_every` steps and at completion.

Goals
- The whole trajectory is a pure function of (network seed, dataset, TrainConfig).
- Divergence aborts with a `NumericError` naming the step; nothing is clipped.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Protocol, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.grainflow.core import network as nn
from src.grainflow.core.errors import ConfigError, DatasetError, NumericError, ShapeError, ValueRangeError
from src.grainflow.core.layers import cross_entropy
from src.grainflow.core.network import GradientSet, Network
from src.grainflow.core.tensor import Rng, Tensor, derive_seed
from src.grainflow.data.dataset import Dataset, split

logger = logging.getLogger(__name__)

_SHUFFLE_KEY = 104729


class TrainConfig(BaseModel):
    """Optimizer hyperparameters and schedule; exactly one of `steps` / `epochs` is set."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    steps: int | None = Field(default=None, ge=1)
    epochs: int | None = Field(default=None, ge=1)
    learning_rate: float = Field(default=0.01, gt=0.0, allow_inf_nan=False)
    seed: int = Field(default=0, ge=0)
    eval_every: int = Field(default=100, ge=1)
    checkpoint_every: int = Field(default=0, ge=0)
    val_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _one_schedule(self) -> "TrainConfig":
        if (self.steps is None) == (self.epochs is None):
            raise ValueError("exactly one of steps or epochs must be given")
        return self


def make_train_config(**fields: Any) -> TrainConfig:
    try:
        return TrainConfig.model_validate(fields)
    except ValidationError as exc:
        raise ConfigError(f"invalid training config: {exc.errors(include_url=False)}") from exc


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"


@dataclass(frozen=True, slots=True)
class MetricsRecord:
    step: int
    epoch: float
    split: Split
    loss: float
    accuracy: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss or not math.isfinite(self.loss):
            raise ValueRangeError(f"loss must be finite and >= 0, got {self.loss}")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueRangeError(f"accuracy must lie in [0, 1], got {self.accuracy}")


class MetricsSink(Protocol):
    def write(self, record: MetricsRecord) -> None: ...


@dataclass(frozen=True, slots=True)
class ConfidenceStats:
    """Probability assigned to the true class over one class's samples."""

    min: float
    mean: float
    max: float


@dataclass(frozen=True, slots=True)
class EvaluationReport:
    loss: float
    accuracy: float
    per_class_accuracy: tuple[float | None, ...]
    confusion: tuple[tuple[int, ...], ...]
    confidence: tuple[ConfidenceStats | None, ...]
    # Mean probability of the predicted class, grouped by true class.
    predicted_confidence: tuple[float | None, ...]
    sample_count: int


@dataclass(slots=True)
class TrainedResult:
    network: Network
    history: list[MetricsRecord]
    steps: int
    train_size: int
    val_size: int

    def final(self, which: Split) -> MetricsRecord | None:
        rows = [r for r in self.history if r.split is which]
        return rows[-1] if rows else None


@dataclass(frozen=True, slots=True)
class StudyPoint:
    step: int
    report: EvaluationReport


CheckpointFn = Callable[[Network, int], None]
StepHook = Callable[[Network, int], None]


def _check_compatible(net: Network, data: Dataset) -> None:
    if tuple(net.config.class_names) != tuple(data.class_names):
        raise ConfigError(
            f"dataset classes {list(data.class_names)} do not match network classes {list(net.config.class_names)}"
        )
    if data.image_shape is not None and data.image_shape != tuple(net.config.input_shape):
        raise ShapeError(
            f"dataset images are {list(data.image_shape)} but the network expects {list(net.config.input_shape)}"
        )


def sgd_step(net: Network, grads: GradientSet, lr: float) -> None:
    """p <- p - lr * g for every parameter tensor of `net`."""
    if not lr > 0.0 or not math.isfinite(lr):
        raise ValueRangeError(f"learning rate must be finite and > 0, got {lr}")
    params = net.parameter_tensors()
    if len(params) != len(grads.tensors):
        raise ShapeError(f"{len(grads.tensors)} gradients for {len(params)} parameter tensors")
    updated: list[Tensor] = []
    for (name, p), g in zip(net.named_tensors(), grads.tensors):
        if p.shape != g.shape:
            raise ShapeError(f"gradient for {name} has shape {list(g.shape)}, expected {list(p.shape)}")
        if not np.isfinite(g.numpy()).all():
            raise NumericError(f"non-finite gradient for {name}")
        with np.errstate(over="ignore", invalid="ignore"):
            values = p.numpy() - lr * g.numpy()
        if not np.isfinite(values).all():
            raise NumericError(f"update of {name} overflowed")
        updated.append(Tensor(values))
    net.set_parameter_tensors(updated)


def evaluate(net: Network, data: Dataset) -> EvaluationReport:
    if len(data) == 0:
        raise DatasetError("cannot evaluate on an empty dataset")
    _check_compatible(net, data)
    classes = net.config.class_count
    confusion = np.zeros((classes, classes), dtype=np.int64)
    true_probs: list[list[float]] = [[] for _ in range(classes)]
    predicted_probs: list[list[float]] = [[] for _ in range(classes)]
    total_loss = 0.0
    for sample in data.samples:
        probs = nn.forward(net, sample.image).probabilities
        predicted, confidence = nn.argmax_verdict(probs)
        total_loss += cross_entropy(probs, sample.label)
        confusion[sample.label, predicted] += 1
        true_probs[sample.label].append(float(probs.numpy()[sample.label]))
        predicted_probs[sample.label].append(confidence)

    row_sums = confusion.sum(axis=1)
    per_class = tuple(float(confusion[c, c] / row_sums[c]) if row_sums[c] else None for c in range(classes))
    stats = tuple(
        ConfidenceStats(min=min(p), mean=float(np.mean(p)), max=max(p)) if p else None for p in true_probs
    )
    return EvaluationReport(
        loss=total_loss / len(data),
        accuracy=float(np.trace(confusion) / len(data)),
        per_class_accuracy=per_class,
        confusion=tuple(tuple(int(v) for v in row) for row in confusion),
        confidence=stats,
        predicted_confidence=tuple(float(np.mean(p)) if p else None for p in predicted_probs),
        sample_count=len(data),
    )


def initial_loss_check(net: Network, data: Dataset) -> float:
    """Mean loss of a fresh network; about ln(|classes|) for a symmetric start."""
    report = evaluate(net, data)
    expected = math.log(net.config.class_count) if net.config.class_count > 1 else 0.0
    logger.info("Initial loss %.6f (ln |classes| = %.6f), accuracy %.3f", report.loss, expected, report.accuracy)
    return report.loss


def _emit(
    net: Network,
    step: int,
    train: Dataset,
    val: Dataset,
    history: list[MetricsRecord],
    sink: MetricsSink | None,
) -> None:
    epoch = step / len(train)
    for which, part in ((Split.TRAIN, train), (Split.VAL, val)):
        if len(part) == 0:
            continue
        report = evaluate(net, part)
        record = MetricsRecord(step=step, epoch=epoch, split=which, loss=report.loss, accuracy=report.accuracy)
        history.append(record)
        if sink is not None:
            sink.write(record)
        logger.info("step %d (epoch %.3f) %s loss=%.6f accuracy=%.4f", step, epoch, which.value, record.loss, record.accuracy)


def train(
    net: Network,
    data: Dataset,
    cfg: TrainConfig,
    sink: MetricsSink | None = None,
    *,
    checkpoint: CheckpointFn | None = None,
    on_step: StepHook | None = None,
) -> TrainedResult:
    """Train `net` in place on the train part of `data` split by `cfg.val_fraction`."""
    if len(data) == 0:
        raise DatasetError("cannot train on an empty dataset")
    _check_compatible(net, data)
    missing = [name for name, n in zip(data.class_names, data.class_counts()) if n == 0]
    if missing:
        raise DatasetError(f"classes without samples: {missing}")

    train_set, val_set = split(data, cfg.val_fraction, cfg.seed)
    starved = [name for name, n in zip(train_set.class_names, train_set.class_counts()) if n == 0]
    if starved:
        raise DatasetError(f"val_fraction {cfg.val_fraction} leaves no training samples for {starved}")

    n = len(train_set)
    total = cfg.steps if cfg.steps is not None else cfg.epochs * n
    logger.info(
        "🚀 Training %d steps (train=%d, val=%d, lr=%g, seed=%d)", total, n, len(val_set), cfg.learning_rate, cfg.seed
    )

    history: list[MetricsRecord] = []
    step = 0
    pass_index = 0
    while step < total:
        order = Rng(derive_seed(cfg.seed, _SHUFFLE_KEY, pass_index)).permutation(n)
        for j in order:
            if step >= total:
                break
            sample = train_set.samples[int(j)]
            step += 1
            try:
                trace = nn.forward(net, sample.image)
                loss = cross_entropy(trace.probabilities, sample.label)
                if not math.isfinite(loss):
                    raise NumericError("non-finite loss", step=step)
                grads = nn.backward(net, trace, sample.label)
                sgd_step(net, grads, cfg.learning_rate)
            except NumericError as exc:
                if exc.step is None:
                    raise NumericError(str(exc), step=step) from exc
                raise
            except ValueRangeError as exc:
                raise NumericError(f"training diverged: {exc}", step=step) from exc
            net.steps_trained += 1
            logger.debug("step %d sample=%s loss=%.6f", step, sample.source, loss)

            if step % cfg.eval_every == 0 or step == total:
                _emit(net, step, train_set, val_set, history, sink)
            if checkpoint is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                checkpoint(net, step)
            if on_step is not None:
                on_step(net, step)
        pass_index += 1

    logger.info("✅ Training finished after %d steps", step)
    return TrainedResult(network=net, history=history, steps=step, train_size=n, val_size=len(val_set))


def step_study(
    net: Network,
    train_data: Dataset,
    test_data: Dataset,
    step_counts: Sequence[int],
    cfg: TrainConfig,
    sink: MetricsSink | None = None,
) -> list[StudyPoint]:
    """Train once up to max(step_counts), evaluating `test_data` at every listed step."""
    counts = sorted(set(step_counts))
    if not counts or counts[0] < 1:
        raise ConfigError(f"step counts must be positive integers, got {list(step_counts)}")
    if len(test_data) == 0:
        raise DatasetError("the study needs a non-empty test set")
    _check_compatible(net, test_data)
    run_cfg = cfg.model_copy(update={"steps": counts[-1], "epochs": None})
    wanted = set(counts)
    points: list[StudyPoint] = []

    def _snapshot(current: Network, step: int) -> None:
        if step in wanted:
            report = evaluate(current, test_data)
            logger.info("📊 step %d test accuracy %.4f", step, report.accuracy)
            points.append(StudyPoint(step=step, report=report))

    train(net, train_data, run_cfg, sink, on_step=_snapshot)
    return points
