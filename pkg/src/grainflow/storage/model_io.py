"""Bit-exact model files.

Layout (all integers little-endian):

    magic      8 bytes   b"GRAINFG1"
    hlen       u32       length of the header in bytes
    header     hlen      UTF-8 JSON, sorted keys, no whitespace:
                         {"config": NetworkConfig, "seed": int, "steps_trained": int}
    tensors    repeated  per parameter tensor in declaration order:
                         u64 ndim, ndim x u64 extents, prod(extents) x f64 values
    crc        u32       CRC-32 (zlib) of every byte between magic and crc

The checksum is verified before anything else is decoded, so a truncated or bit-flipped
file is reported as corruption. A file whose checksum holds but whose content does not
describe a consistent network is a format error.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from pathlib import Path

import numpy as np

from src.grainflow.core.errors import ConfigError, CorruptionError, FormatError, ShapeError, StorageError, ValueRangeError
from src.grainflow.core.layers import ConvParams, DenseParams
from src.grainflow.core.network import LayerKind, LayerParams, Network, NetworkConfig, make_config, parameter_shapes
from src.grainflow.core.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"GRAINFG1"
MODEL_SUFFIX = ".gfm"

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F64 = np.dtype("<f8")


def _header(net: Network) -> bytes:
    doc = {
        "config": net.config.model_dump(mode="json", exclude_none=True),
        "seed": int(net.seed),
        "steps_trained": int(net.steps_trained),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode_model(net: Network) -> bytes:
    header = _header(net)
    body = bytearray(_U32.pack(len(header)))
    body += header
    for tensor in net.parameter_tensors():
        body += _U64.pack(tensor.ndim)
        for extent in tensor.shape:
            body += _U64.pack(extent)
        body += tensor.numpy().astype(_F64).tobytes()
    return MAGIC + bytes(body) + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data: bytes, offset: int) -> None:
        self.data = data
        self.pos = offset

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{what} runs past the end of the payload")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u64(self, what: str) -> int:
        return _U64.unpack(self.take(_U64.size, what))[0]


def decode_model(data: bytes) -> Network:
    if len(data) < len(MAGIC):
        if data == MAGIC[: len(data)]:
            raise CorruptionError(f"model file truncated to {len(data)} bytes")
        raise FormatError("not a grainflow model file (bad magic)")
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"not a grainflow model file (magic {data[:len(MAGIC)]!r})")
    if len(data) < len(MAGIC) + _U32.size * 2:
        raise CorruptionError(f"model file truncated to {len(data)} bytes")

    body, trailer = data[len(MAGIC) : -_U32.size], data[-_U32.size :]
    expected = _U32.unpack(trailer)[0]
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if actual != expected:
        raise CorruptionError(f"checksum mismatch (stored {expected:08x}, computed {actual:08x})")

    reader = _Reader(body, 0)
    (header_len,) = _U32.unpack(reader.take(_U32.size, "header length"))
    try:
        doc = json.loads(reader.take(header_len, "header").decode("utf-8"))
        config: NetworkConfig = make_config(**doc["config"])
        seed, steps_trained = int(doc["seed"]), int(doc["steps_trained"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError, ConfigError) as exc:
        raise FormatError(f"invalid model header: {exc}") from exc

    try:
        expected_shapes = parameter_shapes(config)
    except ShapeError as exc:
        raise FormatError(f"header config is not shape-feasible: {exc}") from exc

    tensors: list[Tensor] = []
    for name, shape in expected_shapes:
        ndim = reader.u64(f"tensor {name}")
        if ndim != len(shape):
            raise FormatError(f"tensor {name} has {ndim} dimensions, config requires {len(shape)}")
        extents = tuple(reader.u64(f"tensor {name}") for _ in range(ndim))
        if extents != shape:
            raise FormatError(f"tensor {name} has shape {list(extents)}, config requires {list(shape)}")
        count = int(np.prod(shape))
        raw = reader.take(count * _F64.itemsize, f"tensor {name}")
        try:
            tensors.append(Tensor(np.frombuffer(raw, dtype=_F64).reshape(shape)))
        except ValueRangeError as exc:
            raise FormatError(f"tensor {name}: {exc}") from exc
    if reader.pos != len(body):
        raise FormatError(f"{len(body) - reader.pos} unexpected bytes after the last tensor")
    return _assemble(config, tensors, seed, steps_trained)


def _assemble(config: NetworkConfig, tensors: list[Tensor], seed: int, steps_trained: int) -> Network:
    it = iter(tensors)
    params: list[LayerParams] = []
    for spec in config.layers:
        if spec.kind is LayerKind.CONV:
            params.append(ConvParams(kernels=next(it), biases=next(it)))
        elif spec.kind is LayerKind.DENSE:
            params.append(DenseParams(weights=next(it), biases=next(it)))
        else:
            params.append(None)
    return Network(config=config, params=params, seed=seed, steps_trained=steps_trained)


def save(net: Network, path: str | Path) -> None:
    payload = encode_model(net)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise StorageError(f"cannot write model {path}: {exc}") from exc
    logger.info("💾 Saved model to %s (%d bytes, %d steps trained)", path, len(payload), net.steps_trained)


def load(path: str | Path) -> Network:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read model {path}: {exc}") from exc
    try:
        return decode_model(data)
    except (FormatError, CorruptionError) as exc:
        raise type(exc)(f"{path}: {exc}") from exc
