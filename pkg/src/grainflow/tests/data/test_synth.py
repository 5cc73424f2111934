from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from src.grainflow.core.errors import ValueRangeError
from src.grainflow.data.synth import (
    DEFECT_CLASS_NAMES,
    DefectKind,
    SynthSpec,
    defect_mask,
    synth_dataset,
    synth_image,
)


def _spec(**overrides: object) -> SynthSpec:
    fields = dict(width=32, height=24, base_level=0.8, illum_slope=0.4, noise_sigma=0.0, seed=5)
    fields.update(overrides)
    return SynthSpec(**fields)


def test_clean_image_is_the_illumination_ramp() -> None:
    sample = synth_image(_spec())
    pixels = sample.image.numpy()[0]
    assert sample.label == 1
    assert np.all(pixels[:, 0] == 0.8)
    assert pixels[:, -1] == pytest.approx(np.full(24, 0.8 * (1 - 0.4 * 31 / 32)), abs=1e-12)
    assert np.all(np.diff(pixels, axis=1) < 0)


def test_same_spec_renders_identically() -> None:
    spec = _spec(noise_sigma=0.05, defect_kind=DefectKind.PIT)
    assert synth_image(spec).image.equals(synth_image(spec).image)


def test_scratch_darkens_some_pixels_only() -> None:
    clean = synth_image(_spec()).image.numpy()
    scratched = synth_image(_spec(defect_kind=DefectKind.SCRATCH)).image.numpy()
    assert not np.array_equal(clean, scratched)
    assert np.all(scratched <= clean + 1e-15)


def test_defect_and_clean_share_noise_field() -> None:
    clean = synth_image(_spec(noise_sigma=0.03)).image.numpy()
    pitted = synth_image(_spec(noise_sigma=0.03, defect_kind=DefectKind.PIT)).image.numpy()
    untouched = defect_mask(_spec(defect_kind=DefectKind.PIT)) == 0.0
    assert untouched.any()
    assert np.array_equal(clean[0][untouched], pitted[0][untouched])


@pytest.mark.parametrize("kind", list(DefectKind))
def test_every_kind_stays_in_unit_range(kind: DefectKind) -> None:
    sample = synth_image(_spec(defect_kind=kind, noise_sigma=0.5, base_level=0.95))
    pixels = sample.image.numpy()
    assert pixels.min() >= 0.0 and pixels.max() <= 1.0
    assert sample.label == (1 if kind is DefectKind.NONE else 0)


def test_mask_intensities() -> None:
    assert defect_mask(_spec()).sum() == 0.0
    assert defect_mask(_spec(defect_kind=DefectKind.PIT)).min() >= -0.4
    assert defect_mask(_spec(defect_kind=DefectKind.PATCH)).min() >= -0.2
    assert defect_mask(_spec(defect_kind=DefectKind.PATCH)).min() < 0.0


def test_spec_validation() -> None:
    with pytest.raises(ValidationError):
        _spec(illum_slope=1.5)
    with pytest.raises(ValidationError):
        _spec(width=0)


def test_binary_dataset_is_balanced() -> None:
    dataset = synth_dataset(15, 12, 10, seed=1)
    assert len(dataset) == 30
    assert dataset.class_names == ("bad", "OK")
    assert dataset.class_counts() == [15, 15]
    assert dataset.image_shape == (1, 10, 12)
    assert dataset.sources()[0] == "synth:bad/0000"


def test_smallest_dataset_has_one_per_class() -> None:
    assert len(synth_dataset(1, 8, 8, seed=0)) == 2


def test_dataset_is_deterministic_in_seed() -> None:
    a = synth_dataset(3, 8, 8, seed=2)
    b = synth_dataset(3, 8, 8, seed=2)
    c = synth_dataset(3, 8, 8, seed=3)
    assert all(x.image.equals(y.image) for x, y in zip(a.samples, b.samples))
    assert not all(x.image.equals(y.image) for x, y in zip(a.samples, c.samples))


def test_defects_mode_classes() -> None:
    dataset = synth_dataset(2, 16, 16, seed=0, mode="defects")
    assert dataset.class_names == DEFECT_CLASS_NAMES
    assert dataset.class_counts() == [2, 2]


def test_dataset_size_must_be_positive() -> None:
    with pytest.raises(ValueRangeError):
        synth_dataset(0, 8, 8, seed=0)
