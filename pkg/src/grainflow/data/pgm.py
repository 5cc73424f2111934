"""PGM (P2 ASCII / P5 binary) grayscale reader and writer.

Pixels are normalised by maxval into [0, 1] and returned as a [1, H, W] tensor.
16-bit rasters (maxval > 255) are big-endian, per the netpbm format. Parse errors
report the byte offset where decoding stopped.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from src.grainflow.core.errors import ParseError, ShapeError, StorageError
from src.grainflow.core.tensor import Tensor

_WHITESPACE = b" \t\n\r\v\f"
_MAX_MAXVAL = 65535
_RASTER_TOKEN = re.compile(rb"#[^\n]*|[^\s#]+")


def _next_token(data: bytes, pos: int, *, path: str | Path | None) -> tuple[bytes, int, int]:
    """Return (token, token_offset, position_after_token), skipping whitespace and comments."""
    n = len(data)
    while pos < n:
        ch = data[pos : pos + 1]
        if ch in _WHITESPACE and ch:
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            pos = n if end < 0 else end + 1
        else:
            break
    if pos >= n:
        raise ParseError("unexpected end of header", offset=pos, path=path)
    start = pos
    while pos < n and data[pos : pos + 1] not in _WHITESPACE and data[pos : pos + 1] != b"#":
        pos += 1
    return data[start:pos], start, pos


def _header_int(token: bytes, offset: int, what: str, *, path: str | Path | None) -> int:
    if not token.isdigit():
        raise ParseError(f"{what} must be a decimal integer, got {token!r}", offset=offset, path=path)
    value = int(token)
    if value < 1:
        raise ParseError(f"{what} must be >= 1, got {value}", offset=offset, path=path)
    return value


def parse_pgm(data: bytes, *, path: str | Path | None = None) -> Tensor:
    magic = data[:2]
    if len(data) < 2 or magic not in (b"P2", b"P5"):
        raise ParseError(f"unsupported magic {magic!r}; only P2/P5 grayscale PGM is read", offset=0, path=path)
    pos = 2
    if pos < len(data) and data[pos : pos + 1] not in _WHITESPACE and data[pos : pos + 1] != b"#":
        raise ParseError("magic must be followed by whitespace", offset=pos, path=path)

    fields: list[int] = []
    for what in ("width", "height", "maxval"):
        token, offset, pos = _next_token(data, pos, path=path)
        fields.append(_header_int(token, offset, what, path=path))
    width, height, maxval = fields
    if maxval > _MAX_MAXVAL:
        raise ParseError(f"maxval {maxval} exceeds {_MAX_MAXVAL}", offset=pos, path=path)
    count = width * height

    if magic == b"P5":
        if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE:
            raise ParseError("expected a single whitespace byte before the raster", offset=pos, path=path)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        needed = count * dtype.itemsize
        available = len(data) - pos
        if available < needed:
            raise ParseError(
                f"truncated raster: expected {needed} bytes, found {available}", offset=len(data), path=path
            )
        pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
    else:
        samples: list[int] = []
        for match in _RASTER_TOKEN.finditer(data, pos):
            token = match.group()
            if token.startswith(b"#"):
                continue
            if not token.isdigit():
                raise ParseError(f"sample must be a decimal integer, got {token!r}", offset=match.start(), path=path)
            samples.append(int(token))
            if len(samples) == count:
                break
        if len(samples) < count:
            raise ParseError(
                f"truncated raster: expected {count} samples, found {len(samples)}", offset=len(data), path=path
            )
        pixels = np.array(samples, dtype=np.float64)

    if pixels.size and pixels.max() > maxval:
        raise ParseError(f"sample {int(pixels.max())} exceeds maxval {maxval}", offset=pos, path=path)
    return Tensor((pixels / maxval).reshape(1, height, width))


def load_pgm(path: str | Path) -> Tensor:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    return parse_pgm(data, path=path)


def encode_pgm(image: Tensor, *, maxval: int = 255, binary: bool = True) -> bytes:
    """Quantise a [1, H, W] image in [0, 1] to PGM bytes."""
    if image.ndim != 3 or image.shape[0] != 1:
        raise ShapeError(f"PGM holds a single [1, H, W] channel, got {list(image.shape)}")
    if not 1 <= maxval <= _MAX_MAXVAL:
        raise ShapeError(f"maxval must be in [1, {_MAX_MAXVAL}], got {maxval}")
    _, height, width = image.shape
    levels = np.rint(np.clip(image.numpy()[0], 0.0, 1.0) * maxval).astype(np.int64)
    header = f"{'P5' if binary else 'P2'}\n{width} {height}\n{maxval}\n".encode("ascii")
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        return header + levels.astype(dtype).tobytes()
    rows = "\n".join(" ".join(str(v) for v in row) for row in levels)
    return header + rows.encode("ascii") + b"\n"


def write_pgm(path: str | Path, image: Tensor, *, maxval: int = 255, binary: bool = True) -> None:
    payload = encode_pgm(image, maxval=maxval, binary=binary)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
