"""Differentiable layer operations with analytic backward passes.

Each forward/backward pair is a pure function over `Tensor` values. Convolution is
valid (no padding) with stride 1 and is computed im2col-style: a strided window
view of the input contracted against the kernels with `numpy.tensordot`.

Layout conventions
- feature maps: [channels, height, width]
- conv kernels: [out_maps, in_maps, k, k]
- dense weights: [out_units, in_units]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.grainflow.core.errors import LabelIndexError, ShapeError, ValueRangeError
from src.grainflow.core.tensor import Tensor

# Probability floor inside cross_entropy; bounds the loss by -ln(1e-12) ~= 27.63.
CE_EPSILON = 1e-12


@dataclass(slots=True)
class ConvParams:
    kernels: Tensor
    biases: Tensor

    def __post_init__(self) -> None:
        if self.kernels.ndim != 4:
            raise ShapeError(f"conv kernels must be 4-D [out, in, k, k], got {list(self.kernels.shape)}")
        out_maps, _, kh, kw = self.kernels.shape
        if kh != kw:
            raise ShapeError(f"conv kernels must be square, got {kh}x{kw}")
        if self.biases.shape != (out_maps,):
            raise ShapeError(f"conv biases must have shape [{out_maps}], got {list(self.biases.shape)}")

    @property
    def out_maps(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_maps(self) -> int:
        return self.kernels.shape[1]

    @property
    def k(self) -> int:
        return self.kernels.shape[2]

    def tensors(self) -> tuple[Tensor, Tensor]:
        return self.kernels, self.biases


@dataclass(slots=True)
class DenseParams:
    weights: Tensor
    biases: Tensor

    def __post_init__(self) -> None:
        if self.weights.ndim != 2:
            raise ShapeError(f"dense weights must be 2-D [out, in], got {list(self.weights.shape)}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"dense biases must have shape [{self.weights.shape[0]}], got {list(self.biases.shape)}"
            )

    @property
    def out_units(self) -> int:
        return self.weights.shape[0]

    @property
    def in_units(self) -> int:
        return self.weights.shape[1]

    def tensors(self) -> tuple[Tensor, Tensor]:
        return self.weights, self.biases


@dataclass(frozen=True, slots=True)
class PoolTrace:
    """Argmax bookkeeping of one max-pooling pass.

    `rows`/`cols` hold, for every pooled cell [c, y, x], the absolute input
    coordinates of the element that won its window.
    """

    input_shape: tuple[int, int, int]
    factor: int
    rows: np.ndarray
    cols: np.ndarray

    @property
    def output_shape(self) -> tuple[int, int, int]:
        c, h, w = self.input_shape
        return c, h // self.factor, w // self.factor


def _require_3d(t: Tensor, what: str) -> tuple[int, int, int]:
    if t.ndim != 3:
        raise ShapeError(f"{what} expects a [channels, height, width] tensor, got {list(t.shape)}")
    c, h, w = t.shape
    return c, h, w


def _require_label(label: int, classes: int) -> int:
    if isinstance(label, bool) or not isinstance(label, (int, np.integer)) or not 0 <= label < classes:
        raise LabelIndexError(f"label {label!r} outside [0, {classes})")
    return int(label)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def conv2d_forward(input: Tensor, p: ConvParams) -> Tensor:
    c, h, w = _require_3d(input, "conv2d")
    if c != p.in_maps:
        raise ShapeError(f"conv2d expects {p.in_maps} input maps, got {c}")
    k = p.k
    if h < k or w < k:
        raise ShapeError(f"conv2d input {h}x{w} is smaller than the {k}x{k} kernel")
    windows = sliding_window_view(input.numpy(), (k, k), axis=(1, 2))  # [C, Ho, Wo, k, k]
    out = np.tensordot(p.kernels.numpy(), windows, axes=([1, 2, 3], [0, 3, 4]))  # [O, Ho, Wo]
    out += p.biases.numpy()[:, None, None]
    return Tensor(out)


def conv2d_backward(input: Tensor, p: ConvParams, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    c, h, w = _require_3d(input, "conv2d backward")
    k = p.k
    expected = (p.out_maps, h - k + 1, w - k + 1)
    if c != p.in_maps or h < k or w < k or grad_out.shape != expected:
        raise ShapeError(
            f"conv2d backward: grad_out {list(grad_out.shape)} does not match forward output {list(expected)}"
        )
    g = grad_out.numpy()
    windows = sliding_window_view(input.numpy(), (k, k), axis=(1, 2))  # [C, Ho, Wo, k, k]

    grad_biases = g.sum(axis=(1, 2))
    grad_kernels = np.tensordot(g, windows, axes=([1, 2], [1, 2]))  # [O, C, k, k]

    # Full correlation of the zero-padded upstream gradient with the flipped kernels.
    padded = np.pad(g, ((0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    padded_windows = sliding_window_view(padded, (k, k), axis=(1, 2))  # [O, H, W, k, k]
    flipped = p.kernels.numpy()[:, :, ::-1, ::-1]
    grad_input = np.tensordot(padded_windows, flipped, axes=([0, 3, 4], [0, 2, 3]))  # [H, W, C]
    return Tensor(grad_input.transpose(2, 0, 1)), Tensor(grad_kernels), Tensor(grad_biases)


# ---------------------------------------------------------------------------
# Max pooling
# ---------------------------------------------------------------------------


def maxpool_forward(input: Tensor, factor: int) -> tuple[Tensor, PoolTrace]:
    c, h, w = _require_3d(input, "maxpool")
    if factor < 1:
        raise ShapeError(f"pool factor must be >= 1, got {factor}")
    if h < factor or w < factor:
        raise ShapeError(f"maxpool input {h}x{w} is smaller than the {factor}x{factor} window")
    ho, wo = h // factor, w // factor
    cropped = input.numpy()[:, : ho * factor, : wo * factor]
    blocks = cropped.reshape(c, ho, factor, wo, factor).transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, factor * factor)
    # np.argmax returns the first maximum, i.e. row-major order inside the window.
    winner = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, winner[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[None, :, None] * factor + winner // factor
    cols = np.arange(wo)[None, None, :] * factor + winner % factor
    return Tensor(out), PoolTrace(input_shape=(c, h, w), factor=factor, rows=rows, cols=cols)


def maxpool_backward(trace: PoolTrace, grad_out: Tensor) -> Tensor:
    if grad_out.shape != trace.output_shape:
        raise ShapeError(
            f"maxpool backward: grad_out {list(grad_out.shape)} does not match pooled shape {list(trace.output_shape)}"
        )
    grad_input = np.zeros(trace.input_shape, dtype=np.float64)
    channels = np.arange(trace.input_shape[0])[:, None, None]
    # Windows do not overlap, so every input cell receives at most one value.
    grad_input[channels, trace.rows, trace.cols] = grad_out.numpy()
    return Tensor(grad_input)


# ---------------------------------------------------------------------------
# Elementwise / dense
# ---------------------------------------------------------------------------


def relu_forward(input: Tensor) -> Tensor:
    return Tensor(np.maximum(input.numpy(), 0.0))


def relu_backward(input: Tensor, grad_out: Tensor) -> Tensor:
    if input.shape != grad_out.shape:
        raise ShapeError(f"relu backward: {list(input.shape)} vs {list(grad_out.shape)}")
    return Tensor(np.where(input.numpy() > 0.0, grad_out.numpy(), 0.0))


def dense_forward(input: Tensor, p: DenseParams) -> Tensor:
    if input.ndim != 1 or input.shape[0] != p.in_units:
        raise ShapeError(f"dense expects a flat input of {p.in_units} values, got {list(input.shape)}")
    return Tensor(p.weights.numpy() @ input.numpy() + p.biases.numpy())


def dense_backward(input: Tensor, p: DenseParams, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    if input.ndim != 1 or input.shape[0] != p.in_units or grad_out.shape != (p.out_units,):
        raise ShapeError(
            f"dense backward: input {list(input.shape)} / grad_out {list(grad_out.shape)} "
            f"do not fit weights {list(p.weights.shape)}"
        )
    g = grad_out.numpy()
    grad_input = p.weights.numpy().T @ g
    grad_weights = np.outer(g, input.numpy())
    return Tensor(grad_input), Tensor(grad_weights), Tensor(g.copy())


# ---------------------------------------------------------------------------
# Output layer
# ---------------------------------------------------------------------------


def softmax(input: Tensor) -> Tensor:
    if input.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got {list(input.shape)}")
    x = input.numpy()
    e = np.exp(x - x.max())
    return Tensor(e / e.sum())


def cross_entropy(probs: Tensor, label: int) -> float:
    if probs.ndim != 1:
        raise ShapeError(f"cross_entropy expects a probability vector, got {list(probs.shape)}")
    label = _require_label(label, probs.shape[0])
    p = probs.numpy()
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueRangeError(f"probabilities must sum to 1 (sum={p.sum()!r})")
    return max(0.0, -math.log(max(float(p[label]), CE_EPSILON)))


def softmax_ce_backward(logits: Tensor, label: int) -> Tensor:
    probs = softmax(logits).numpy().copy()
    label = _require_label(label, probs.shape[0])
    probs[label] -= 1.0
    return Tensor(probs)
