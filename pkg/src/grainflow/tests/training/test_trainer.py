from __future__ import annotations

import math

import numpy as np
import pytest

from src.grainflow.core import network as nn
from src.grainflow.core.errors import ConfigError, DatasetError, NumericError, ShapeError, ValueRangeError
from src.grainflow.core.network import BINARY_CLASS_NAMES, GradientSet, LayerSpec, Network, NetworkConfig, make_config
from src.grainflow.core.tensor import Tensor, from_data, zeros
from src.grainflow.data.dataset import Dataset, Sample, split_test
from src.grainflow.data.synth import synth_dataset
from src.grainflow.training.trainer import (
    MetricsRecord,
    Split,
    evaluate,
    initial_loss_check,
    make_train_config,
    sgd_step,
    step_study,
    train,
)


class ListSink:
    def __init__(self) -> None:
        self.records: list[MetricsRecord] = []

    def write(self, record: MetricsRecord) -> None:
        self.records.append(record)


def _one_unit_net(weight: float = 1.0, bias: float = 1.0) -> Network:
    config = make_config(
        input_shape=(1, 1, 1),
        layers=(LayerSpec.flatten(), LayerSpec.dense(1), LayerSpec.softmax()),
        class_names=("OK",),
    )
    return nn.init(config, 0).with_parameter_tensors([from_data([1, 1], [weight]), from_data([1], [bias])])


def _grads(*values: float) -> GradientSet:
    weight, bias = values
    return GradientSet(tensors=(from_data([1, 1], [weight]), from_data([1], [bias])))


# ---------------------------------------------------------------------------
# TrainConfig
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "fields",
    [
        {"steps": 10, "learning_rate": 0.0},
        {"steps": 10, "learning_rate": float("inf")},
        {"steps": 10, "learning_rate": float("nan")},
        {"steps": 10, "epochs": 2},
        {},
        {"epochs": 0},
        {"steps": 10, "val_fraction": 1.0},
        {"steps": 10, "eval_every": 0},
        {"steps": 10, "momentum": 0.9},
    ],
)
def test_invalid_train_config(fields: dict) -> None:
    with pytest.raises(ConfigError):
        make_train_config(**fields)


# ---------------------------------------------------------------------------
# sgd_step
# ---------------------------------------------------------------------------


def test_sgd_step_moves_against_gradient() -> None:
    net = _one_unit_net()
    sgd_step(net, _grads(2.0, 2.0), 0.1)
    assert net.parameter_tensors()[0].data[0] == pytest.approx(0.8, abs=1e-15)
    sgd_step(net, _grads(2.0, 2.0), 0.1)
    assert net.parameter_tensors()[0].data[0] == pytest.approx(1.0 - 2 * 0.1 * 2.0, abs=1e-15)


def test_sgd_step_with_zero_gradient_is_identity(small_config: NetworkConfig) -> None:
    net = nn.init(small_config, 1, zero_logit_layer=False)
    before = net.copy()
    sgd_step(net, GradientSet(tensors=tuple(zeros(t.shape) for t in net.parameter_tensors())), 0.5)
    assert net.parameters_equal(before)


def test_sgd_step_rejects_mismatched_gradients() -> None:
    net = _one_unit_net()
    with pytest.raises(ShapeError):
        sgd_step(net, GradientSet(tensors=(from_data([1], [1.0]), from_data([1], [1.0]))), 0.1)
    with pytest.raises(ShapeError):
        sgd_step(net, GradientSet(tensors=(from_data([1, 1], [1.0]),)), 0.1)


@pytest.mark.parametrize("lr", [0.0, -0.1, math.inf])
def test_sgd_step_rejects_bad_learning_rate(lr: float) -> None:
    with pytest.raises(ValueRangeError):
        sgd_step(_one_unit_net(), _grads(1.0, 1.0), lr)


def test_sgd_step_overflow_is_numeric_error() -> None:
    net = _one_unit_net(weight=1e308)
    with pytest.raises(NumericError):
        sgd_step(net, _grads(-1e308, 0.0), 10.0)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def test_evaluate_uniform_network_uses_tie_rule(small_config: NetworkConfig, binary_dataset: Dataset) -> None:
    report = evaluate(nn.init(small_config, 0), binary_dataset)
    assert report.accuracy == 0.5
    assert report.loss == pytest.approx(math.log(2), abs=1e-12)
    assert report.confusion == ((4, 0), (4, 0))
    assert report.per_class_accuracy == (1.0, 0.0)
    assert report.sample_count == 8
    assert report.confidence[1].mean == pytest.approx(0.5)


def test_evaluate_confusion_counts_every_sample(small_config: NetworkConfig, binary_dataset: Dataset) -> None:
    report = evaluate(nn.init(small_config, 6, zero_logit_layer=False), binary_dataset)
    assert [sum(row) for row in report.confusion] == binary_dataset.class_counts()
    assert 0.0 <= report.accuracy <= 1.0


def test_evaluate_single_class_network_is_always_right() -> None:
    samples = tuple(Sample(image=from_data([1, 1, 1], [v]), label=0, source=f"s{v}") for v in (0.0, 0.5, 1.0))
    report = evaluate(_one_unit_net(), Dataset(samples=samples, class_names=("OK",)))
    assert report.accuracy == 1.0
    assert report.confusion == ((3,),)
    assert report.loss == 0.0


def test_evaluate_rejects_incompatible_data(small_config: NetworkConfig, binary_dataset: Dataset) -> None:
    net = nn.init(small_config, 0)
    with pytest.raises(DatasetError):
        evaluate(net, Dataset(samples=(), class_names=BINARY_CLASS_NAMES))
    with pytest.raises(ConfigError):
        evaluate(net, Dataset(samples=binary_dataset.samples, class_names=("Sc", "Pa")))
    with pytest.raises(ShapeError):
        evaluate(net, synth_dataset(1, 10, 10, seed=0))


def test_initial_loss_is_near_chance(small_config: NetworkConfig, binary_dataset: Dataset) -> None:
    for seed in range(10):
        net = nn.init(small_config, seed)
        assert 0.60 <= initial_loss_check(net, binary_dataset) <= 0.78
        assert 0.3 <= evaluate(net, binary_dataset).accuracy <= 0.7


def test_initial_loss_on_four_classes_is_near_ln4() -> None:
    binary = synth_dataset(3, 12, 12, seed=5, mode="binary")
    defects = synth_dataset(3, 12, 12, seed=6, mode="defects")
    samples = binary.samples + tuple(Sample(s.image, s.label + 2, s.source) for s in defects.samples)
    data = Dataset(samples=samples, class_names=(*binary.class_names, *defects.class_names))
    config = nn.builtin_config("paper2conv", (1, 12, 12), data.class_names)
    for seed in range(5):
        assert initial_loss_check(nn.init(config, seed), data) == pytest.approx(math.log(4), abs=0.15)


@pytest.mark.parametrize("seed", range(100))
def test_single_small_step_reduces_sample_loss(
    small_config: NetworkConfig, binary_dataset: Dataset, seed: int
) -> None:
    net = nn.init(small_config, seed, zero_logit_layer=seed % 2 == 0)
    sample = binary_dataset.samples[seed % len(binary_dataset)]
    before = nn.sample_loss(net, sample.image, sample.label)
    sgd_step(net, nn.backward(net, nn.forward(net, sample.image), sample.label), 1e-4)
    assert nn.sample_loss(net, sample.image, sample.label) < before


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def test_training_is_deterministic(small_config: NetworkConfig, binary_dataset: Dataset) -> None:
    cfg = make_train_config(steps=20, eval_every=5, val_fraction=0.25, seed=4)
    a = train(nn.init(small_config, 3), binary_dataset, cfg)
    b = train(nn.init(small_config, 3), binary_dataset, cfg)
    assert a.history == b.history
    assert a.network.parameters_equal(b.network)


def test_epoch_schedule_and_metric_rows(small_config: NetworkConfig, binary_dataset: Dataset) -> None:
    sink = ListSink()
    net = nn.init(small_config, 0)
    result = train(net, binary_dataset, make_train_config(epochs=2, eval_every=5, val_fraction=0.25), sink)
    assert (result.train_size, result.val_size) == (6, 2)
    assert result.steps == 12
    assert net.steps_trained == 12
    assert [(r.step, r.split) for r in result.history] == [
        (5, Split.TRAIN),
        (5, Split.VAL),
        (10, Split.TRAIN),
        (10, Split.VAL),
        (12, Split.TRAIN),
        (12, Split.VAL),
    ]
    assert result.final(Split.TRAIN).epoch == 2.0
    assert sink.records == result.history


def test_no_validation_rows_without_val_split(small_config: NetworkConfig, binary_dataset: Dataset) -> None:
    result = train(nn.init(small_config, 0), binary_dataset, make_train_config(steps=4, eval_every=2, val_fraction=0.0))
    assert {r.split for r in result.history} == {Split.TRAIN}
    assert result.final(Split.VAL) is None
    assert [r.step for r in result.history] == [2, 4]


def test_checkpoint_callback_cadence(small_config: NetworkConfig, binary_dataset: Dataset) -> None:
    seen: list[tuple[int, int]] = []
    cfg = make_train_config(steps=10, eval_every=100, checkpoint_every=4, val_fraction=0.25)
    train(nn.init(small_config, 0), binary_dataset, cfg, checkpoint=lambda n, step: seen.append((step, n.steps_trained)))
    assert seen == [(4, 4), (8, 8)]


def test_starved_class_is_a_dataset_error(small_config: NetworkConfig, binary_dataset: Dataset) -> None:
    with pytest.raises(DatasetError):
        train(nn.init(small_config, 0), binary_dataset, make_train_config(steps=1, val_fraction=0.9))


def test_divergence_reports_the_step(
    monkeypatch: pytest.MonkeyPatch, small_config: NetworkConfig, binary_dataset: Dataset
) -> None:
    def exploding_backward(net: Network, trace: nn.ForwardTrace, label: int) -> GradientSet:
        return GradientSet(tensors=tuple(Tensor(np.full(t.shape, 1e308)) for t in net.parameter_tensors()))

    monkeypatch.setattr(nn, "backward", exploding_backward)
    with pytest.raises(NumericError) as excinfo:
        train(nn.init(small_config, 0), binary_dataset, make_train_config(steps=5, learning_rate=10.0))
    assert excinfo.value.step == 1
    assert excinfo.value.exit_code == 3


def test_step_study_snapshots_each_count(small_config: NetworkConfig, binary_dataset: Dataset) -> None:
    test_data = synth_dataset(2, 12, 12, seed=8)
    net = nn.init(small_config, 0)
    points = step_study(net, binary_dataset, test_data, [4, 2, 6, 4], make_train_config(steps=1, val_fraction=0.25))
    assert [p.step for p in points] == [2, 4, 6]
    assert all(p.report.sample_count == 4 for p in points)
    assert net.steps_trained == 6


def test_step_study_rejects_bad_counts(small_config: NetworkConfig, binary_dataset: Dataset) -> None:
    with pytest.raises(ConfigError):
        step_study(nn.init(small_config, 0), binary_dataset, binary_dataset, [], make_train_config(steps=1))
    with pytest.raises(ConfigError):
        step_study(nn.init(small_config, 0), binary_dataset, binary_dataset, [0, 5], make_train_config(steps=1))


# ---------------------------------------------------------------------------
# Desk-scale acceptance runs
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_binary_training_converges_at_64() -> None:
    data = synth_dataset(15, 64, 64, seed=0)
    config = nn.builtin_config("paper2conv", (1, 64, 64), BINARY_CLASS_NAMES)
    result = train(nn.init(config, 0), data, make_train_config(steps=5000, learning_rate=0.01, eval_every=500))
    rows = [r for r in result.history if r.split is Split.TRAIN]
    assert rows[-1].accuracy >= 0.95
    assert rows[-1].loss <= 0.1
    assert rows[-1].loss < rows[0].loss


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_more_steps_do_not_hurt_held_out_accuracy(seed: int) -> None:
    data = synth_dataset(15, 64, 64, seed=seed)
    test_data = synth_dataset(15, 64, 64, seed=seed + 100)
    config = nn.builtin_config("paper2conv", (1, 64, 64), BINARY_CLASS_NAMES)
    cfg = make_train_config(steps=1, learning_rate=0.01, eval_every=1000, seed=seed)
    points = step_study(nn.init(config, seed), data, test_data, [1000, 2500, 5000], cfg)
    assert points[-1].report.accuracy >= points[0].report.accuracy - 0.05


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_two_defect_protocol_reaches_high_val_accuracy(seed: int) -> None:
    data = synth_dataset(70, 64, 64, seed=seed, mode="defects")
    rest, test_data = split_test(data, 10, seed)
    assert test_data.class_counts() == [10, 10]
    config = nn.builtin_config("paper2conv", (1, 64, 64), rest.class_names)
    cfg = make_train_config(epochs=20, learning_rate=0.01, eval_every=100, val_fraction=1 / 6, seed=seed)
    result = train(nn.init(config, seed), rest, cfg)
    assert (result.train_size, result.val_size) == (100, 20)
    assert max(r.accuracy for r in result.history if r.split is Split.VAL) >= 0.9
