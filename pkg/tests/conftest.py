from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np
import pytest
import tomli_w

from olm_tools.datasets import GAUSSIAN_COV, ImageDataset, sample_gaussian2d
from olm_tools.denoiser import GaussianOracle, init_model
from olm_tools.io.core import write
from olm_tools.rng import generator
from olm_tools.sampler import SamplerConfig


@pytest.fixture
def fast_sampler() -> SamplerConfig:
    """
    Sampler settings that stop within a few dozen steps.
    """
    return SamplerConfig(h=0.2, beta=0.5, sigma_end=0.05, t_max=200, fill=0.0, seed=3)


@pytest.fixture
def oracle() -> GaussianOracle:
    return GaussianOracle(np.zeros(2), GAUSSIAN_COV)


@pytest.fixture
def points() -> np.ndarray:
    return sample_gaussian2d(200, seed=0).points


@pytest.fixture
def tiny_model():
    return init_model((2, 8, 8, 2), seed=0)


def smooth_images(n: int, height: int, width: int, seed: int) -> np.ndarray:
    """
    Random images built from a few low-frequency components, scaled into
    [0, 1] and flattened row-major.
    """
    rng = generator(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    basis = np.stack(
        [np.ones_like(xx), xx, yy, xx * yy, np.cos(np.pi * xx), np.cos(np.pi * yy)]
    ).reshape(6, -1)
    images = rng.standard_normal((n, 6)) @ basis
    low, high = images.min(), images.max()
    return (images - low) / (high - low)


@pytest.fixture
def tiny_images() -> ImageDataset:
    return ImageDataset(smooth_images(64, 4, 4, seed=1), 4, 4)


@pytest.fixture
def idx_archive(tmp_path: Path) -> Path:
    """
    A gzip-compressed IDX archive of 40 8x8 images.
    """
    pixels = np.round(smooth_images(40, 8, 8, seed=2) * 255).astype(np.uint8)
    path = tmp_path / "images-idx3-ubyte.gz"
    write(path, pixels.reshape(40, 8, 8))
    return path


def gaussian_recipe(**overrides: Any) -> dict[str, Any]:
    """
    A small gaussian2d experiment reconstructing with the analytic prior.
    """
    recipe: dict[str, Any] = {
        "name": "tiny",
        "seed": 11,
        "out": "run",
        "prior": "oracle",
        "k": [1],
        "baselines": ["pca", "random", "ica"],
        "dataset": {"kind": "gaussian2d", "n": 96, "split": {"n_test": 24}},
        "denoiser": {"epochs": 1, "batch": 32, "hidden": [8, 8]},
        "sampler": {"h": 0.2, "beta": 0.5, "sigma_end": 0.05, "t_max": 200},
        "optimize": {"epochs": 1, "batch": 32, "n_samples": 1, "micro_batch": 32},
        "sweep": {"n_theta": 6, "n_items": 8, "n_samples": 1},
        "evaluate": {
            "n_items": 12,
            "n_samples": 1,
            "sample_counts": [1, 2],
            "noise_levels": [0.0, 0.2],
            "parameter_grid": {"h": [0.2, 0.3]},
            "n_boot": 50,
        },
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(recipe.get(key), dict):
            recipe[key] = {**recipe[key], **value}
        else:
            recipe[key] = value
    return recipe


def write_recipe(directory: Path, recipe: dict[str, Any], name: str = "experiment.toml") -> Path:
    path = directory / name
    with path.open("wb") as fh:
        tomli_w.dump(recipe, fh)
    return path


@pytest.fixture
def recipe_path(tmp_path: Path) -> Path:
    return write_recipe(tmp_path, gaussian_recipe())
