"""Synthetic surface images with uneven illumination and drawn defects.

Stand-in corpus for real strip photographs: a left-to-right darkening ramp, Gaussian
sensor noise and one optional defect (scratch, pit or patch). Defect masks are
rasterised with Pillow at 4x resolution and box-reduced, so edges are anti-aliased.

Every random quantity comes from `Rng` streams derived from the SynthSpec seed: one stream
for noise and one for defect geometry. A scratched image and a clean image with the
same seed therefore share their noise field exactly.
"""

from __future__ import annotations

import logging
import math
from enum import Enum
from typing import Callable

import numpy as np
from PIL import Image, ImageDraw
from pydantic import BaseModel, ConfigDict, Field

from src.grainflow.core.errors import ValueRangeError
from src.grainflow.core.network import BINARY_CLASS_NAMES
from src.grainflow.core.tensor import Rng, Tensor, derive_seed
from src.grainflow.data.dataset import Dataset, Sample

logger = logging.getLogger(__name__)

SUPERSAMPLE = 4

SCRATCH_INTENSITY = -0.3
PIT_INTENSITY = -0.4
PATCH_INTENSITY = -0.2

SCRATCH_WIDTH_PX = (1, 3)
PIT_RADIUS_PX = (2, 6)
PATCH_EXTENT_OF_WIDTH = (0.08, 0.25)

# Per-sample variation used by synth_dataset.
SLOPE_RANGE = (0.2, 0.5)
BASE_RANGE = (0.65, 0.9)
DATASET_NOISE_SIGMA = 0.02

DEFECT_CLASS_NAMES: tuple[str, str] = ("patches", "scratches")

_NOISE_STREAM = 0
_GEOMETRY_STREAM = 1
_LIGHTING_STREAM = 2


class DefectKind(str, Enum):
    NONE = "none"
    SCRATCH = "scratch"
    PIT = "pit"
    PATCH = "patch"


class SynthMode(str, Enum):
    BINARY = "binary"
    DEFECTS = "defects"


_BINARY_BAD_CYCLE = (DefectKind.SCRATCH, DefectKind.PIT, DefectKind.PATCH)
_DEFECT_MODE_KINDS = (DefectKind.PATCH, DefectKind.SCRATCH)


class SynthSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    width: int = Field(ge=1)
    height: int = Field(ge=1)
    base_level: float = Field(ge=0.0, le=1.0)
    illum_slope: float = Field(ge=0.0, le=1.0)
    noise_sigma: float = Field(default=0.0, ge=0.0)
    defect_kind: DefectKind = DefectKind.NONE
    seed: int = Field(default=0, ge=0)


def illumination(spec: SynthSpec) -> np.ndarray:
    """base * (1 - slope * x / W) for every pixel, x being the column index."""
    cols = np.arange(spec.width, dtype=np.float64)
    row = spec.base_level * (1.0 - spec.illum_slope * cols / spec.width)
    return np.broadcast_to(row, (spec.height, spec.width)).copy()


def _coverage(spec: SynthSpec, draw_fn: Callable[[ImageDraw.ImageDraw, int], None]) -> np.ndarray:
    """Fraction of each pixel covered by the shape `draw_fn` paints on a supersampled canvas."""
    s = SUPERSAMPLE
    canvas = Image.new("L", (spec.width * s, spec.height * s), 0)
    draw_fn(ImageDraw.Draw(canvas), s)
    hi = np.asarray(canvas, dtype=np.float64) / 255.0
    return hi.reshape(spec.height, s, spec.width, s).mean(axis=(1, 3))


def defect_mask(spec: SynthSpec) -> np.ndarray:
    """Additive intensity mask of the SynthSpec defect (all zeros for `none`)."""
    if spec.defect_kind is DefectKind.NONE:
        return np.zeros((spec.height, spec.width), dtype=np.float64)

    rng = Rng(derive_seed(spec.seed, _GEOMETRY_STREAM))
    w, h = spec.width, spec.height

    if spec.defect_kind is DefectKind.SCRATCH:
        cx, cy = rng.scalar(0.0, w), rng.scalar(0.0, h)
        length = rng.scalar(0.3, 0.8) * min(w, h)
        angle = rng.scalar(0.0, math.pi)
        dx, dy = 0.5 * length * math.cos(angle), 0.5 * length * math.sin(angle)
        width_px = rng.integer(*SCRATCH_WIDTH_PX)

        def _scratch(d: ImageDraw.ImageDraw, s: int) -> None:
            d.line([((cx - dx) * s, (cy - dy) * s), ((cx + dx) * s, (cy + dy) * s)], fill=255, width=width_px * s)

        return SCRATCH_INTENSITY * _coverage(spec, _scratch)

    if spec.defect_kind is DefectKind.PIT:
        rx, ry = rng.integer(*PIT_RADIUS_PX), rng.integer(*PIT_RADIUS_PX)
        cx, cy = rng.scalar(0.0, w), rng.scalar(0.0, h)

        def _pit(d: ImageDraw.ImageDraw, s: int) -> None:
            d.ellipse([(cx - rx) * s, (cy - ry) * s, (cx + rx) * s, (cy + ry) * s], fill=255)

        return PIT_INTENSITY * _coverage(spec, _pit)

    lo, hi = PATCH_EXTENT_OF_WIDTH
    pw = max(1.0, rng.scalar(lo, hi) * w)
    ph = max(1.0, rng.scalar(lo, hi) * w)
    x0, y0 = rng.scalar(0.0, max(w - pw, 1e-9)), rng.scalar(0.0, max(h - ph, 1e-9))

    def _patch(d: ImageDraw.ImageDraw, s: int) -> None:
        d.rectangle([x0 * s, y0 * s, (x0 + pw) * s - 1, (y0 + ph) * s - 1], fill=255)

    return PATCH_INTENSITY * _coverage(spec, _patch)


def synth_image(spec: SynthSpec, *, label: int | None = None, source: str | None = None) -> Sample:
    """Render `spec`; without an explicit label the binary rule applies (OK=1 iff no defect)."""
    pixels = illumination(spec) + defect_mask(spec)
    if spec.noise_sigma > 0.0:
        pixels = pixels + Rng(derive_seed(spec.seed, _NOISE_STREAM)).normal((spec.height, spec.width), spec.noise_sigma)
    pixels = np.clip(pixels, 0.0, 1.0)
    if label is None:
        label = 1 if spec.defect_kind is DefectKind.NONE else 0
    if source is None:
        source = f"synth:{spec.defect_kind.value}/seed={spec.seed}"
    return Sample(image=Tensor(pixels[None, :, :]), label=label, source=source)


def _kind_for(mode: SynthMode, label: int, index: int) -> DefectKind:
    if mode is SynthMode.DEFECTS:
        return _DEFECT_MODE_KINDS[label]
    if BINARY_CLASS_NAMES[label] == "OK":
        return DefectKind.NONE
    return _BINARY_BAD_CYCLE[index % len(_BINARY_BAD_CYCLE)]


def synth_dataset(
    n_per_class: int,
    width: int,
    height: int,
    seed: int,
    mode: SynthMode | str = SynthMode.BINARY,
) -> Dataset:
    """Balanced synthetic dataset; sample i of class c is rendered from derive_seed(seed, c, i)."""
    if n_per_class < 1:
        raise ValueRangeError(f"n_per_class must be >= 1, got {n_per_class}")
    mode = SynthMode(mode)
    class_names = BINARY_CLASS_NAMES if mode is SynthMode.BINARY else DEFECT_CLASS_NAMES
    samples: list[Sample] = []
    for label, name in enumerate(class_names):
        for index in range(n_per_class):
            sample_seed = derive_seed(seed, label, index)
            lighting = Rng(derive_seed(sample_seed, _LIGHTING_STREAM))
            spec = SynthSpec(
                width=width,
                height=height,
                base_level=lighting.scalar(*BASE_RANGE),
                illum_slope=lighting.scalar(*SLOPE_RANGE),
                noise_sigma=DATASET_NOISE_SIGMA,
                defect_kind=_kind_for(mode, label, index),
                seed=sample_seed,
            )
            samples.append(synth_image(spec, label=label, source=f"synth:{name}/{index:04d}"))
    logger.info("🧪 Generated %d synthetic %s samples (%dx%d, seed=%d)", len(samples), mode.value, width, height, seed)
    return Dataset(samples=tuple(samples), class_names=class_names)
