from __future__ import annotations

import numpy as np
import pytest

from src.grainflow.core import layers
from src.grainflow.core.layers import ConvParams
from src.grainflow.core.network import BINARY_CLASS_NAMES, LayerSpec, NetworkConfig, builtin_config
from src.grainflow.core.tensor import Tensor
from src.grainflow.training.gradcheck import (
    check_layer,
    finite_difference,
    relative_error,
    run_gradcheck,
    sample_coords,
)


def test_relative_error_uses_floor() -> None:
    assert relative_error(np.array([0.0]), np.array([1e-9]))[0] == pytest.approx(1e-6)
    assert relative_error(np.array([2.0]), np.array([2.0002]))[0] == pytest.approx(1e-4, rel=1e-3)


def test_sample_coords_subsets_large_tensors() -> None:
    assert sample_coords(5, 10, seed=0).tolist() == [0, 1, 2, 3, 4]
    picked = sample_coords(100, 10, seed=3)
    assert len(set(picked.tolist())) == 10
    assert picked.tolist() == sorted(picked.tolist())
    assert picked.tolist() == sample_coords(100, 10, seed=3).tolist()


def test_finite_difference_of_quadratic() -> None:
    x = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]))
    numeric = finite_difference(lambda t: float(np.sum(t.numpy() ** 2)), x, [0, 1, 2, 3])
    np.testing.assert_allclose(numeric, [2.0, -4.0, 1.0, 6.0], rtol=1e-7)


def test_parameter_free_reshape_has_no_checks() -> None:
    assert check_layer(0, LayerSpec.flatten(), None, (2, 3, 3), seed=0) == []


@pytest.mark.parametrize("seed", range(5))
def test_paper2conv_passes(small_config: NetworkConfig, seed: int) -> None:
    report = run_gradcheck(small_config, seed)
    assert report.passed, [(r.check_id, r.worst_error) for r in report.results if not r.passed]
    assert report.worst_error <= 1e-4


def test_paper2conv_covers_every_layer_and_parameter(small_config: NetworkConfig) -> None:
    report = run_gradcheck(small_config, 0)
    ids = {r.check_id for r in report.results}
    assert "layer0 (conv 3x3/6).kernels" in ids
    assert "layer2 (pool /2).input" in ids
    assert "layer8 (softmax).logits" in ids
    assert {"network.layer0.kernels", "network.layer3.biases", "network.layer7.weights"} <= ids
    assert list(report.per_layer())[-1] == "network"


@pytest.mark.parametrize("seed", range(5))
def test_paper3conv_passes_at_22(seed: int) -> None:
    config = builtin_config("paper3conv", (1, 22, 22), BINARY_CLASS_NAMES)
    report = run_gradcheck(config, seed)
    assert report.passed, [(r.check_id, r.worst_error) for r in report.results if not r.passed]


def test_coordinate_budget_is_respected(small_config: NetworkConfig) -> None:
    report = run_gradcheck(small_config, 0, max_coords=10)
    assert max(r.coords for r in report.results) == 10
    assert report.passed


def test_same_seed_same_errors(tiny_config: NetworkConfig) -> None:
    first = [r.worst_error for r in run_gradcheck(tiny_config, 7).results]
    second = [r.worst_error for r in run_gradcheck(tiny_config, 7).results]
    assert first == second


def test_broken_conv_backward_is_caught(monkeypatch: pytest.MonkeyPatch, tiny_config: NetworkConfig) -> None:
    honest = layers.conv2d_backward

    def off_by_one_percent(input: Tensor, p: ConvParams, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        gx, gk, gb = honest(input, p, grad_out)
        return gx, Tensor(gk.numpy() * 1.01), gb

    monkeypatch.setattr(layers, "conv2d_backward", off_by_one_percent)
    report = run_gradcheck(tiny_config, 0)
    assert not report.passed
    failed = {r.check_id for r in report.results if not r.passed}
    assert "layer0 (conv 3x3/2).kernels" in failed
    assert "network.layer0.kernels" in failed
    assert "layer4 (dense 2).weights" not in failed
