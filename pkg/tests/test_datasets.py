from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from olm_tools.datasets import (
    ELLIPSE_AXES,
    ELLIPSE_JITTER,
    GAUSSIAN_COV,
    DatasetConfig,
    ImageDataset,
    PointCloud2D,
    SplitSpec,
    cache_dataset,
    ellipse_rotation,
    load_cached,
    load_dataset,
    load_idx_images,
    preprocess,
    sample_gaussian2d,
    sample_ksparse2d,
    sample_manifold2d,
    split,
    split_indices,
)


@pytest.mark.parametrize("sampler", [sample_gaussian2d, sample_ksparse2d, sample_manifold2d])
def test_synthetic_sets_are_seeded(sampler) -> None:
    a = sampler(100, 4)
    assert isinstance(a, PointCloud2D)
    assert a.points.shape == (100, 2)
    assert np.array_equal(a.points, sampler(100, 4).points)
    assert not np.array_equal(a.points, sampler(100, 5).points)


@pytest.mark.parametrize("sampler", [sample_gaussian2d, sample_ksparse2d, sample_manifold2d])
def test_synthetic_samples_do_not_depend_on_the_sample_count(sampler) -> None:
    small = sampler(50, 4).points
    large = sampler(100, 4).points
    assert np.array_equal(large[:50], small)


def test_gaussian_covariance() -> None:
    points = sample_gaussian2d(20_000, 0).points
    assert np.allclose(np.cov(points.T), GAUSSIAN_COV, atol=0.05)


def test_ksparse_points_lie_on_an_axis() -> None:
    points = sample_ksparse2d(1000, 1).points
    assert np.all(np.min(np.abs(points), axis=1) == 0)
    on_x = np.mean(points[:, 1] == 0)
    assert 0.4 < on_x < 0.6


def test_manifold_points_lie_near_the_ellipse() -> None:
    points = sample_manifold2d(2000, 2).points
    a, b = ELLIPSE_AXES
    local = points @ ellipse_rotation()
    radius = np.sqrt((local[:, 0] / a) ** 2 + (local[:, 1] / b) ** 2)
    assert np.all(np.abs(radius - 1) < 10 * ELLIPSE_JITTER / b)
    assert np.abs(np.median(radius) - 1) < 0.05


@pytest.mark.parametrize("n", [0, -3])
def test_sample_count_must_be_positive(n: int) -> None:
    with pytest.raises(ValueError, match="at least 1"):
        sample_gaussian2d(n, 0)


def test_image_dataset_validation() -> None:
    with pytest.raises(ValueError, match="shape"):
        ImageDataset(np.zeros((3, 10)), 3, 3)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        ImageDataset(np.full((2, 4), 2.0), 2, 2)


def test_load_idx_scales_to_unit_range(idx_archive) -> None:
    ds = load_idx_images(idx_archive)
    assert (len(ds), ds.height, ds.width) == (40, 8, 8)
    assert ds.images.min() >= 0 and ds.images.max() <= 1
    assert ds.images.max() == 1.0


def test_preprocess_block_averages(tiny_images) -> None:
    coarse = preprocess(tiny_images, (2, 2))
    first = tiny_images.images[0].reshape(4, 4)
    assert coarse.d == 4
    assert np.isclose(coarse.images[0, 0], first[:2, :2].mean())
    assert np.isclose(coarse.images[0, 3], first[2:, 2:].mean())
    assert preprocess(tiny_images, (4, 4)) is tiny_images


def test_preprocess_requires_divisible_target(tiny_images) -> None:
    with pytest.raises(ValueError, match="evenly divide"):
        preprocess(tiny_images, (3, 3))


def test_split_partitions_items() -> None:
    train, test = split_indices(50, SplitSpec(n_test=10, seed=3))
    assert len(train) == 40 and len(test) == 10
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(50))
    again = split_indices(50, SplitSpec(n_test=10, seed=3))
    assert np.array_equal(test, again[1])


def test_split_rejects_oversized_holdout() -> None:
    with pytest.raises(ValueError, match="hold out"):
        split_indices(10, SplitSpec(n_test=10, seed=0))


def test_split_dataset(tiny_images) -> None:
    train, test = split(tiny_images, SplitSpec(n_test=16, seed=0))
    assert (len(train), len(test)) == (48, 16)
    assert train.height == 4


def test_cache_round_trip(tmp_path, tiny_images) -> None:
    path = tmp_path / "cache.olmt"
    cache_dataset(tiny_images, path)
    restored = load_cached(path)
    assert (restored.height, restored.width) == (4, 4)
    assert np.array_equal(restored.images, tiny_images.images)


def test_dataset_config_derives_split_seed() -> None:
    cfg = DatasetConfig(kind="gaussian2d", n=30, seed=9, split={"n_test": 5})
    assert cfg.split.seed != cfg.seed
    assert cfg.split.seed == DatasetConfig(kind="gaussian2d", n=30, seed=9, split={"n_test": 5}).split.seed


def test_dataset_config_checks_path(tmp_path) -> None:
    with pytest.raises(ValidationError, match="does not exist"):
        DatasetConfig(kind="idx", path=tmp_path / "missing.gz", seed=0, split={})
    with pytest.raises(ValidationError, match="needs a `path`"):
        DatasetConfig(kind="idx", seed=0, split={})


def test_load_dataset_idx(idx_archive) -> None:
    cfg = DatasetConfig(kind="idx", path=idx_archive, target=(4, 4), limit=10, seed=0, split={"n_test": 2})
    ds = load_dataset(cfg)
    assert isinstance(ds, ImageDataset)
    assert (len(ds), ds.d) == (10, 16)


def test_load_dataset_synthetic() -> None:
    cfg = DatasetConfig(kind="manifold2d", n=25, seed=2, split={"n_test": 5})
    assert np.array_equal(load_dataset(cfg).data, sample_manifold2d(25, 2).points)
