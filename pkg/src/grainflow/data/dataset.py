"""Labeled image datasets: loading, resizing, splitting and export.

Purpose
- Turn `<root>/<class_name>/*.pgm` trees into an ordered, immutable `Dataset`.
- Provide the deterministic stratified splits used by training (train/val) and by the
  two-defect protocol (held-out test set).

Ordering is always (class index, file name). Class names are sorted lexicographically
with Python's case-sensitive string order, except that a binary `{OK, bad}` tree is
remapped to `("bad", "OK")` so that bad=0 and OK=1.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import map_coordinates

from src.grainflow.core.errors import DatasetError, LabelIndexError, ShapeError, StorageError, ValueRangeError
from src.grainflow.core.network import BINARY_CLASS_NAMES
from src.grainflow.core.tensor import Rng, Tensor, derive_seed
from src.grainflow.data.pgm import load_pgm, write_pgm

logger = logging.getLogger(__name__)

PGM_SUFFIX = ".pgm"
# Keeps the held-out test draw independent of the train/val draw for the same seed.
_TEST_SPLIT_KEY = 7919


@dataclass(frozen=True, slots=True)
class Sample:
    image: Tensor
    label: int
    source: str

    def __post_init__(self) -> None:
        if self.image.ndim != 3 or self.image.shape[0] != 1:
            raise ShapeError(f"{self.source}: sample images are [1, H, W], got {list(self.image.shape)}")
        pixels = self.image.numpy()
        if pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ValueRangeError(f"{self.source}: pixels must lie in [0, 1]")
        if self.label < 0:
            raise LabelIndexError(f"{self.source}: negative label {self.label}")


@dataclass(frozen=True, slots=True)
class Dataset:
    samples: tuple[Sample, ...]
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.class_names)) != len(self.class_names):
            raise DatasetError(f"class names must be distinct, got {list(self.class_names)}")
        for s in self.samples:
            if s.label >= len(self.class_names):
                raise LabelIndexError(
                    f"{s.source}: label {s.label} does not index classes {list(self.class_names)}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> list[int]:
        counts = Counter(s.label for s in self.samples)
        return [counts.get(c, 0) for c in range(self.class_count)]

    def indices_of(self, label: int) -> list[int]:
        return [i for i, s in enumerate(self.samples) if s.label == label]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Samples at `indices`, kept in dataset order."""
        return Dataset(samples=tuple(self.samples[i] for i in sorted(indices)), class_names=self.class_names)

    def sources(self) -> list[str]:
        return [s.source for s in self.samples]

    @property
    def image_shape(self) -> tuple[int, ...] | None:
        return self.samples[0].image.shape if self.samples else None


def resize_bilinear(image: Tensor, out_h: int, out_w: int) -> Tensor:
    """Corner-aligned bilinear resampling of a [1, H, W] image."""
    if image.ndim != 3 or image.shape[0] != 1:
        raise ShapeError(f"resize expects a [1, H, W] image, got {list(image.shape)}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target extents must be >= 1, got {out_h}x{out_w}")
    _, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image

    def _grid(src: int, dst: int) -> np.ndarray:
        if dst == 1:
            return np.array([(src - 1) / 2.0])
        return np.linspace(0.0, src - 1, dst)

    rows, cols = np.meshgrid(_grid(h, out_h), _grid(w, out_w), indexing="ij")
    plane = image.numpy()[0]
    out = map_coordinates(plane, [rows, cols], order=1, mode="nearest")
    # Interpolation round-off must not leave the input's value range.
    out = np.clip(out, plane.min(), plane.max())
    return Tensor(out[None, :, :])


def _class_order(names: list[str]) -> tuple[str, ...]:
    if set(names) == set(BINARY_CLASS_NAMES):
        return BINARY_CLASS_NAMES
    return tuple(sorted(names))


def load_dataset_dir(root: str | Path, target_h: int, target_w: int) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    try:
        class_dirs = {p.name: p for p in root.iterdir() if p.is_dir()}
    except OSError as exc:
        raise StorageError(f"cannot list {root}: {exc}") from exc
    if not class_dirs:
        raise DatasetError(f"dataset root {root} has no class subdirectories")

    class_names = _class_order(list(class_dirs))
    samples: list[Sample] = []
    for label, name in enumerate(class_names):
        files = sorted(p for p in class_dirs[name].iterdir() if p.is_file() and p.suffix.lower() == PGM_SUFFIX)
        if not files:
            raise DatasetError(f"class directory {class_dirs[name]} holds no {PGM_SUFFIX} files")
        for path in files:
            image = resize_bilinear(load_pgm(path), target_h, target_w)
            samples.append(Sample(image=image, label=label, source=f"{name}/{path.name}"))

    dataset = Dataset(samples=tuple(samples), class_names=class_names)
    logger.info(
        "📂 Loaded %d samples from %s (classes=%s, counts=%s)",
        len(dataset),
        root,
        list(class_names),
        dataset.class_counts(),
    )
    return dataset


def _stratified_draw(
    dataset: Dataset, per_class: Sequence[int], seed_for_class: Callable[[int], int]
) -> tuple[list[int], list[int]]:
    kept: list[int] = []
    drawn: list[int] = []
    for label in range(dataset.class_count):
        members = dataset.indices_of(label)
        order = Rng(seed_for_class(label)).permutation(len(members))
        picked = {members[j] for j in order[: per_class[label]]}
        drawn += [i for i in members if i in picked]
        kept += [i for i in members if i not in picked]
    return kept, drawn


def split(dataset: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/val partition; ceil(val_fraction * n_c) samples of each class go to val."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueRangeError(f"val_fraction must be in [0, 1), got {val_fraction}")
    # Rounding first keeps 0.2 * 250 at exactly 50 instead of 50.00000000000001.
    per_class = [math.ceil(round(val_fraction * n, 9)) for n in dataset.class_counts()]
    train_idx, val_idx = _stratified_draw(dataset, per_class, lambda c: derive_seed(seed, c))
    return dataset.subset(train_idx), dataset.subset(val_idx)


def split_test(dataset: Dataset, n_test_per_class: int, seed: int) -> tuple[Dataset, Dataset]:
    """Carve a fixed number of test samples per class off `dataset`; returns (rest, test)."""
    if n_test_per_class < 0:
        raise ValueRangeError(f"test count must be >= 0, got {n_test_per_class}")
    counts = dataset.class_counts()
    for name, n in zip(dataset.class_names, counts):
        if n_test_per_class >= n:
            raise DatasetError(
                f"class {name!r} has {n} samples; cannot hold out {n_test_per_class} and keep any for training"
            )
    rest_idx, test_idx = _stratified_draw(
        dataset, [n_test_per_class] * dataset.class_count, lambda c: derive_seed(seed, _TEST_SPLIT_KEY, c)
    )
    return dataset.subset(rest_idx), dataset.subset(test_idx)


def write_dataset(dataset: Dataset, out_dir: str | Path) -> dict[str, int]:
    """Export as `<out>/<class>/<index>.pgm` (8-bit P5); returns files written per class."""
    out_dir = Path(out_dir)
    written: dict[str, int] = {}
    for label, name in enumerate(dataset.class_names):
        class_dir = out_dir / name
        try:
            class_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create {class_dir}: {exc}") from exc
        members = [dataset.samples[i] for i in dataset.indices_of(label)]
        for index, sample in enumerate(members):
            write_pgm(class_dir / f"{index:04d}{PGM_SUFFIX}", sample.image)
        written[name] = len(members)
    logger.info("💾 Wrote %d images under %s", sum(written.values()), out_dir)
    return written
