"""Finite-difference verification of every analytic backward pass.

Two kinds of checks run for a configuration:

- per layer: each layer's forward is scalarised with a fixed random projection
  `L = sum(r * f(x))` on a fresh tie-free random input, and the analytic input /
  parameter gradients are compared against central differences;
- end to end: the full network loss `cross_entropy(softmax(logits), label)` is
  differentiated numerically with respect to every parameter coordinate.

Error metric per coordinate: |a - n| / max(|a|, |n|, floor). The floor keeps
coordinates whose true gradient is ~0 from dividing round-off by round-off.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from src.grainflow.core import layers
from src.grainflow.core import network as nn
from src.grainflow.core.layers import ConvParams, DenseParams
from src.grainflow.core.network import LayerKind, LayerSpec, Network, NetworkConfig
from src.grainflow.core.tensor import Rng, Tensor, derive_seed

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
DEFAULT_STEP = 1e-6
DEFAULT_MAX_COORDS = 2000
ERROR_FLOOR = 1e-3

# Keeps ReLU inputs away from the kink by more than any finite-difference step.
_KINK_MARGIN = 1e-3

_IMAGE_KEY = 1
_LAYER_KEY = 2
_COORD_KEY = 3


@dataclass(frozen=True, slots=True)
class CheckResult:
    check_id: str
    layer: str
    passed: bool
    worst_error: float
    coords: int


@dataclass(slots=True)
class GradcheckReport:
    tolerance: float
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def worst_error(self) -> float:
        return max((r.worst_error for r in self.results), default=0.0)

    def per_layer(self) -> dict[str, float]:
        """Worst error per layer label, in check order."""
        worst: dict[str, float] = {}
        for r in self.results:
            worst[r.layer] = max(worst.get(r.layer, 0.0), r.worst_error)
        return worst


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ERROR_FLOOR) -> np.ndarray:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def sample_coords(size: int, max_coords: int, seed: int) -> np.ndarray:
    """All flat indices when they fit, otherwise a seeded sorted subset."""
    if size <= max_coords:
        return np.arange(size)
    return np.sort(Rng(seed).permutation(size)[:max_coords])


def finite_difference(
    fn: Callable[[Tensor], float], x: Tensor, coords: Sequence[int], step: float = DEFAULT_STEP
) -> np.ndarray:
    """Central differences of the scalar `fn` at `x` along the given flat coordinates."""
    base = x.numpy().reshape(-1)
    out = np.empty(len(coords), dtype=np.float64)
    for k, i in enumerate(coords):
        plus, minus = base.copy(), base.copy()
        plus[i] += step
        minus[i] -= step
        out[k] = (fn(Tensor(plus.reshape(x.shape))) - fn(Tensor(minus.reshape(x.shape)))) / (2.0 * step)
    return out


def _compare(
    check_id: str,
    layer: str,
    analytic: Tensor,
    fn: Callable[[Tensor], float],
    x: Tensor,
    *,
    tolerance: float,
    step: float,
    max_coords: int,
    coord_seed: int,
) -> CheckResult:
    coords = sample_coords(x.size, max_coords, coord_seed)
    numeric = finite_difference(fn, x, coords, step)
    errors = relative_error(analytic.data[coords], numeric)
    worst = float(errors.max()) if errors.size else 0.0
    return CheckResult(check_id=check_id, layer=layer, passed=worst <= tolerance, worst_error=worst, coords=len(coords))


def _tie_free(rng: Rng, shape: Sequence[int]) -> Tensor:
    values = rng.uniform(shape, -1.0, 1.0)
    values = np.where(np.abs(values) < _KINK_MARGIN, np.copysign(_KINK_MARGIN, values), values)
    return Tensor(values)


def _projection(rng: Rng, shape: Sequence[int]) -> Tensor:
    return Tensor(rng.uniform(shape, -1.0, 1.0))


def _dot(a: Tensor, b: Tensor) -> float:
    return float(np.sum(a.numpy() * b.numpy()))


def check_layer(
    index: int,
    spec: LayerSpec,
    params: nn.LayerParams,
    input_shape: tuple[int, ...],
    seed: int,
    *,
    tolerance: float = DEFAULT_TOLERANCE,
    step: float = DEFAULT_STEP,
    max_coords: int = DEFAULT_MAX_COORDS,
) -> list[CheckResult]:
    """Checks for one layer in isolation; parameter-free reshapes yield no checks."""
    rng = Rng(derive_seed(seed, _LAYER_KEY, index))
    label = f"layer{index} ({spec.describe()})"
    opts = dict(tolerance=tolerance, step=step, max_coords=max_coords)

    def coord_seed(part: int) -> int:
        return derive_seed(seed, _COORD_KEY, index, part)

    x = _tie_free(rng, input_shape)
    if spec.kind is LayerKind.CONV:
        assert isinstance(params, ConvParams)
        r = _projection(rng, layers.conv2d_forward(x, params).shape)
        gx, gk, gb = layers.conv2d_backward(x, params, r)
        return [
            _compare(f"{label}.input", label, gx, lambda t: _dot(r, layers.conv2d_forward(t, params)), x,
                     coord_seed=coord_seed(0), **opts),
            _compare(f"{label}.kernels", label, gk,
                     lambda t: _dot(r, layers.conv2d_forward(x, ConvParams(t, params.biases))), params.kernels,
                     coord_seed=coord_seed(1), **opts),
            _compare(f"{label}.biases", label, gb,
                     lambda t: _dot(r, layers.conv2d_forward(x, ConvParams(params.kernels, t))), params.biases,
                     coord_seed=coord_seed(2), **opts),
        ]
    if spec.kind is LayerKind.DENSE:
        assert isinstance(params, DenseParams)
        r = _projection(rng, (params.out_units,))
        gx, gw, gb = layers.dense_backward(x, params, r)
        return [
            _compare(f"{label}.input", label, gx, lambda t: _dot(r, layers.dense_forward(t, params)), x,
                     coord_seed=coord_seed(0), **opts),
            _compare(f"{label}.weights", label, gw,
                     lambda t: _dot(r, layers.dense_forward(x, DenseParams(t, params.biases))), params.weights,
                     coord_seed=coord_seed(1), **opts),
            _compare(f"{label}.biases", label, gb,
                     lambda t: _dot(r, layers.dense_forward(x, DenseParams(params.weights, t))), params.biases,
                     coord_seed=coord_seed(2), **opts),
        ]
    if spec.kind is LayerKind.POOL:
        out, trace = layers.maxpool_forward(x, spec.pool_factor)
        r = _projection(rng, out.shape)
        gx = layers.maxpool_backward(trace, r)
        return [
            _compare(f"{label}.input", label, gx, lambda t: _dot(r, layers.maxpool_forward(t, spec.pool_factor)[0]),
                     x, coord_seed=coord_seed(0), **opts)
        ]
    if spec.kind is LayerKind.RELU:
        r = _projection(rng, x.shape)
        gx = layers.relu_backward(x, r)
        return [
            _compare(f"{label}.input", label, gx, lambda t: _dot(r, layers.relu_forward(t)), x,
                     coord_seed=coord_seed(0), **opts)
        ]
    if spec.kind is LayerKind.SOFTMAX:
        target = rng.integer(0, input_shape[0] - 1)
        g = layers.softmax_ce_backward(x, target)
        return [
            _compare(f"{label}.logits", label, g, lambda t: layers.cross_entropy(layers.softmax(t), target), x,
                     coord_seed=coord_seed(0), **opts)
        ]
    return []


def check_network(
    net: Network,
    image: Tensor,
    label: int,
    *,
    tolerance: float = DEFAULT_TOLERANCE,
    step: float = DEFAULT_STEP,
    max_coords: int = DEFAULT_MAX_COORDS,
) -> list[CheckResult]:
    """End-to-end check of d loss / d parameter for every parameter tensor."""
    grads = nn.backward(net, nn.forward(net, image), label)
    tensors = net.parameter_tensors()
    results: list[CheckResult] = []
    for position, ((name, tensor), analytic) in enumerate(zip(net.named_tensors(), grads.tensors)):

        def loss_with(t: Tensor, position: int = position) -> float:
            replaced = list(tensors)
            replaced[position] = t
            return nn.sample_loss(net.with_parameter_tensors(replaced), image, label)

        results.append(
            _compare(
                f"network.{name}",
                "network",
                analytic,
                loss_with,
                tensor,
                tolerance=tolerance,
                step=step,
                max_coords=max_coords,
                coord_seed=derive_seed(net.seed, _COORD_KEY, 10_000 + position),
            )
        )
    return results


def run_gradcheck(
    config: NetworkConfig,
    seed: int,
    *,
    tolerance: float = DEFAULT_TOLERANCE,
    step: float = DEFAULT_STEP,
    max_coords: int = DEFAULT_MAX_COORDS,
) -> GradcheckReport:
    """Per-layer checks followed by the end-to-end check, all derived from `seed`."""
    shapes = nn.infer_shapes(config)
    net = nn.init(config, seed, zero_logit_layer=False)
    report = GradcheckReport(tolerance=tolerance)
    opts = dict(tolerance=tolerance, step=step, max_coords=max_coords)

    for index, (spec, params) in enumerate(zip(config.layers, net.params)):
        in_shape = tuple(config.input_shape) if index == 0 else shapes[index - 1]
        report.results += check_layer(index, spec, params, in_shape, seed, **opts)

    image_rng = Rng(derive_seed(seed, _IMAGE_KEY))
    image = Tensor(image_rng.uniform(config.input_shape, 0.0, 1.0))
    label = image_rng.integer(0, config.class_count - 1)
    report.results += check_network(net, image, label, **opts)

    for r in report.results:
        logger.debug("%s worst=%.3e coords=%d", r.check_id, r.worst_error, r.coords)
    logger.info(
        "%s Gradient check %s: worst relative error %.3e (tolerance %.1e)",
        "✅" if report.passed else "❌",
        "passed" if report.passed else "FAILED",
        report.worst_error,
        tolerance,
    )
    return report
