"""
Shared test fixtures for triplane-posterior.

PURPOSE: Provide temporary directories, precision contexts, tiny model shapes and a
    small generated dataset
"""

from __future__ import annotations

import tempfile
from collections.abc import Generator
from pathlib import Path

import numpy as np
import pytest

from triplane_posterior.diffcore.tensor import precision
from triplane_posterior.prior.unet import UNetConfig
from triplane_posterior.reconmodel.model import ReconModel, ReconProfile
from triplane_posterior.scenes.dataset import SceneDataset, generate_dataset


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for test data."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def f64() -> Generator[None, None, None]:
    """Run the test with 64-bit tensors."""
    with precision("float64"):
        yield


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_profile() -> ReconProfile:
    """Reconstruction shapes small enough for finite differences (d = 32)."""
    return ReconProfile.tiny()


@pytest.fixture
def tiny_unet() -> UNetConfig:
    """U-Net over 4x4x2 latents, matching the tiny reconstruction profile."""
    return UNetConfig.tiny()


@pytest.fixture
def tiny_model(tiny_profile: ReconProfile, f64: None) -> ReconModel:
    return ReconModel.initialize(tiny_profile, seed=0)


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Four scenes of five 12x12 views, the last scene held out."""
    root = tmp_path_factory.mktemp("dataset")
    generate_dataset(root, n_scenes=4, n_views=5, resolution=12, seed=7, n_train=4, n_heldout=1)
    return root


@pytest.fixture
def small_dataset(small_dataset_dir: Path) -> SceneDataset:
    return SceneDataset.open(small_dataset_dir)
