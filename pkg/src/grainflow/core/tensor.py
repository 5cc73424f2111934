"""Dense float64 tensors and the seeded random generator.

`Tensor` is a value type: it wraps a read-only, C-contiguous float64 numpy array
whose elements are always finite. Every operation here returns a new tensor.

`Rng` is the only source of randomness in grainflow. It is numpy's PCG64 bit
generator seeded through `SeedSequence`; numpy keeps that stream stable across
platforms and releases, which is what the golden tests rely on.
"""

from __future__ import annotations

import hashlib
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from src.grainflow.core.errors import ShapeError, ValueRangeError

Shape = tuple[int, ...]


def _validate_shape(shape: Iterable[int]) -> Shape:
    extents = tuple(shape)
    if not extents:
        raise ShapeError("shape must list at least one extent")
    for extent in extents:
        if isinstance(extent, bool) or not isinstance(extent, (int, np.integer)):
            raise ShapeError(f"extent {extent!r} is not an integer")
        if extent < 1:
            raise ShapeError(f"extent {extent} must be >= 1 (shape {list(extents)})")
    return tuple(int(e) for e in extents)


class Tensor:
    """Immutable dense row-major array of finite 64-bit reals."""

    __slots__ = ("_array",)

    def __init__(self, array: np.ndarray) -> None:
        arr = np.ascontiguousarray(array, dtype=np.float64)
        if arr.ndim == 0:
            raise ShapeError("tensors need at least one dimension")
        _validate_shape(arr.shape)
        if not np.isfinite(arr).all():
            raise ValueRangeError("tensor elements must be finite (found NaN or Inf)")
        if arr is array or arr.base is not None:
            arr = arr.copy()
        arr.flags.writeable = False
        self._array = arr

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Tensor":
        return cls(np.array(array, dtype=np.float64, copy=True))

    @property
    def shape(self) -> Shape:
        return tuple(self._array.shape)

    @property
    def ndim(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return int(self._array.size)

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the elements (read-only)."""
        return self._array.reshape(-1)

    def numpy(self) -> np.ndarray:
        """Read-only view shaped like the tensor."""
        return self._array

    def flat_index(self, coords: Sequence[int]) -> int:
        if len(coords) != self.ndim:
            raise ShapeError(f"expected {self.ndim} coordinates, got {len(coords)}")
        for c, extent in zip(coords, self.shape):
            if not 0 <= c < extent:
                raise ShapeError(f"coordinate {tuple(coords)} outside shape {list(self.shape)}")
        return int(np.ravel_multi_index(tuple(coords), self.shape))

    def __getitem__(self, coords: int | Sequence[int]) -> float:
        if isinstance(coords, (int, np.integer)):
            coords = (int(coords),)
        return float(self.data[self.flat_index(coords)])

    def reshape(self, shape: Iterable[int]) -> "Tensor":
        target = _validate_shape(shape)
        if int(np.prod(target)) != self.size:
            raise ShapeError(f"cannot reshape {list(self.shape)} into {list(target)}")
        return Tensor(self._array.reshape(target))

    def equals(self, other: "Tensor") -> bool:
        """Bitwise equality of shape and elements."""
        return self.shape == other.shape and self._array.tobytes() == other._array.tobytes()

    def digest(self) -> str:
        """SHA-256 over shape and little-endian element bytes."""
        h = hashlib.sha256()
        h.update(repr(self.shape).encode("utf-8"))
        h.update(self._array.astype("<f8").tobytes())
        return h.hexdigest()

    def __add__(self, other: "Tensor") -> "Tensor":
        return map_binary(self, other, BinaryOp.ADD)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return map_binary(self, other, BinaryOp.SUB)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return map_binary(self, other, BinaryOp.MUL)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)})"


class BinaryOp(str, Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"


_BINARY_UFUNCS = {
    BinaryOp.ADD: np.add,
    BinaryOp.SUB: np.subtract,
    BinaryOp.MUL: np.multiply,
}


def zeros(shape: Iterable[int]) -> Tensor:
    return Tensor(np.zeros(_validate_shape(shape), dtype=np.float64))


def from_data(shape: Iterable[int], values: Iterable[float]) -> Tensor:
    extents = _validate_shape(shape)
    flat = np.asarray(list(values), dtype=np.float64).reshape(-1)
    expected = int(np.prod(extents))
    if flat.size != expected:
        raise ShapeError(f"{flat.size} values cannot fill shape {list(extents)} ({expected} elements)")
    return Tensor(flat.reshape(extents))


def map_binary(a: Tensor, b: Tensor, op: BinaryOp | str) -> Tensor:
    op = BinaryOp(op)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch for {op.value}: {list(a.shape)} vs {list(b.shape)}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = _BINARY_UFUNCS[op](a.numpy(), b.numpy())
    return Tensor(out)


def scale(a: Tensor, c: float) -> Tensor:
    if not np.isfinite(c):
        raise ValueRangeError(f"scale factor must be finite, got {c!r}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.numpy() * float(c)
    return Tensor(out)


def derive_seed(seed: int, *keys: int) -> int:
    """Mix a base seed with integer keys into an independent 64-bit seed."""
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueRangeError(f"seed and stream keys must be non-negative, got {(seed, *keys)}")
    seq = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


class Rng:
    """Seeded PCG64 stream; identical seeds give identical draws everywhere."""

    ALGORITHM = "PCG64 (numpy SeedSequence seeding)"

    def __init__(self, seed: int) -> None:
        if seed < 0:
            raise ValueRangeError(f"seed must be non-negative, got {seed}")
        self._seed = int(seed)
        self._generator = np.random.Generator(np.random.PCG64(self._seed))

    @property
    def seed(self) -> int:
        return self._seed

    def uniform(self, shape: Iterable[int], lo: float, hi: float) -> np.ndarray:
        extents = _validate_shape(shape)
        draws = lo + (hi - lo) * self._generator.random(extents)
        # lo + (hi - lo) * u can round up to hi; keep the interval half-open.
        return np.minimum(draws, np.nextafter(hi, lo))

    def normal(self, shape: Iterable[int], sigma: float) -> np.ndarray:
        return sigma * self._generator.standard_normal(_validate_shape(shape))

    def scalar(self, lo: float, hi: float) -> float:
        return float(self.uniform((1,), lo, hi)[0])

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi]."""
        return int(self._generator.integers(lo, hi, endpoint=True))

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)


def rand_uniform(rng: Rng, shape: Iterable[int], lo: float, hi: float) -> Tensor:
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
        raise ValueRangeError(f"uniform range needs finite lo < hi, got [{lo}, {hi})")
    return Tensor(rng.uniform(shape, lo, hi))
