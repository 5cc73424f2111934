"""Shared fixtures for grainflow tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from src.grainflow.core.network import BINARY_CLASS_NAMES, LayerSpec, NetworkConfig, builtin_config, make_config
from src.grainflow.data.dataset import Dataset, write_dataset
from src.grainflow.data.synth import synth_dataset


@pytest.fixture
def np_rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> NetworkConfig:
    """[1,8,8] input, one conv with 2 maps, 2 classes."""
    return make_config(
        input_shape=(1, 8, 8),
        layers=(
            LayerSpec.conv(3, 2),
            LayerSpec.relu(),
            LayerSpec.pool(2),
            LayerSpec.flatten(),
            LayerSpec.dense(2),
            LayerSpec.softmax(),
        ),
        class_names=BINARY_CLASS_NAMES,
    )


@pytest.fixture
def small_config() -> NetworkConfig:
    return builtin_config("paper2conv", (1, 12, 12), BINARY_CLASS_NAMES)


@pytest.fixture
def binary_dataset() -> Dataset:
    return synth_dataset(4, 12, 12, seed=3, mode="binary")


@pytest.fixture
def synth_dir(tmp_path: Path) -> Path:
    """A written 16x16 binary dataset with 6 images per class."""
    root = tmp_path / "data"
    write_dataset(synth_dataset(6, 16, 16, seed=11, mode="binary"), root)
    return root
