"""Typed errors raised across grainflow.

Library code raises these; only the CLI turns them into exit codes. Every class
carries the exit code it maps to so the mapping lives in one place:

- 1: a numerical check failed (gradient check)
- 2: usage / configuration / parse / format / I-O problems
- 3: numeric divergence during training
"""

from __future__ import annotations

from pathlib import Path


class GrainflowError(Exception):
    """Base class for every error grainflow raises on purpose."""

    exit_code: int = 2


class ShapeError(GrainflowError):
    """A tensor or layer received extents it cannot work with."""

    def __init__(self, message: str, *, layer_index: int | None = None) -> None:
        super().__init__(message)
        self.layer_index = layer_index


class ValueRangeError(GrainflowError):
    """A value is non-finite or outside its allowed range."""


class LabelIndexError(GrainflowError):
    """A class index does not address any class."""


class ParseError(GrainflowError):
    """An input file could not be decoded."""

    def __init__(self, message: str, *, offset: int, path: str | Path | None = None) -> None:
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}{message} (at byte {offset})")
        self.offset = offset
        self.path = str(path) if path is not None else None


class DatasetError(GrainflowError):
    """A dataset is empty, unbalanced or laid out incorrectly."""


class NumericError(GrainflowError):
    """Training diverged (non-finite loss, activations or gradients)."""

    exit_code = 3

    def __init__(self, message: str, *, step: int | None = None) -> None:
        prefix = f"step {step}: " if step is not None else ""
        super().__init__(f"{prefix}{message}")
        self.step = step


class ConfigError(GrainflowError):
    """A configuration is invalid or inconsistent with the data."""


class FormatError(GrainflowError):
    """A model file is structurally wrong (magic, header, tensor shapes)."""


class CorruptionError(GrainflowError):
    """A model file failed its checksum or is truncated."""


class StorageError(GrainflowError):
    """Reading or writing a file failed at the OS level."""
