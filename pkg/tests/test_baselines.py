from __future__ import annotations

import numpy as np
import pytest

from olm_tools.baselines import fast_ica, pca, principal_components, projection_loss, random_orthonormal
from olm_tools.datasets import sample_gaussian2d
from olm_tools.measurement import orthonormality_error


def test_principal_components_of_the_gaussian_set() -> None:
    values, vectors = principal_components(sample_gaussian2d(5000, 1))
    assert values[0] > values[1]
    assert np.allclose(values, [1.8, 0.2], atol=0.1)
    assert np.allclose(vectors[:, 0], np.array([1.0, 1.0]) / np.sqrt(2), atol=0.02)


def test_principal_component_signs() -> None:
    data = np.random.default_rng(0).standard_normal((100, 4)) * [3.0, 2.0, 1.0, 0.5]
    _, vectors = principal_components(data)
    largest = vectors[np.argmax(np.abs(vectors), axis=0), np.arange(4)]
    assert np.all(largest > 0)
    _, flipped = principal_components(-data)
    assert np.allclose(vectors, flipped)


def test_pca(points) -> None:
    m = pca(points, 1)
    assert m.attrs == {"method": "pca"}
    assert orthonormality_error(m.matrix) < 1e-12
    with pytest.raises(ValueError, match="1 <= k < d"):
        pca(points, 2)
    with pytest.raises(ValueError, match="needs more than 1 examples"):
        pca(points[:1], 1)


def test_projection_loss_is_the_discarded_variance() -> None:
    data = np.random.default_rng(1).standard_normal((500, 3)) * [2.0, 1.0, 0.3]
    values, _ = principal_components(data)
    assert projection_loss(pca(data, 2), data) == pytest.approx(values[2])
    for seed in range(5):
        assert projection_loss(random_orthonormal(3, 2, seed), data) >= projection_loss(pca(data, 2), data) - 1e-12


def test_random_orthonormal() -> None:
    m = random_orthonormal(6, 3, seed=2)
    assert orthonormality_error(m.matrix) < 1e-12
    assert m.attrs == {"method": "random", "seed": 2}
    assert np.array_equal(m.matrix, random_orthonormal(6, 3, seed=2).matrix)
    assert not np.array_equal(m.matrix, random_orthonormal(6, 3, seed=3).matrix)
    with pytest.raises(ValueError, match="1 <= k <= d"):
        random_orthonormal(2, 3, seed=0)


def test_fast_ica_recovers_independent_directions() -> None:
    rng = np.random.default_rng(3)
    sources = np.column_stack(
        [rng.uniform(-np.sqrt(3), np.sqrt(3), 4000), rng.laplace(0.0, 1 / np.sqrt(2), 4000)]
    )
    theta = np.pi / 6
    mixing = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    m = fast_ica(sources @ mixing.T, 2, seed=0)
    assert m.attrs["converged"]
    overlap = np.abs(m.matrix.T @ mixing)
    assert np.allclose(np.sort(overlap, axis=1), [[0.0, 1.0], [0.0, 1.0]], atol=0.1)


def test_fast_ica_warns_without_convergence() -> None:
    data = np.random.default_rng(4).laplace(size=(300, 3))
    with pytest.warns(UserWarning, match="did not converge"):
        m = fast_ica(data, 2, max_iter=1, tol=0.0)
    assert m.attrs["converged"] is False
    assert orthonormality_error(m.matrix) < 1e-10


def test_fast_ica_validation() -> None:
    with pytest.raises(ValueError, match="more examples than dimensions"):
        fast_ica(np.ones((3, 3)), 1)
    with pytest.raises(ValueError, match="1 <= k <= d"):
        fast_ica(np.ones((10, 3)), 4)


def test_pca_is_never_beaten_by_random_subspaces() -> None:
    scales = np.array([3.0, 2.0, 1.5, 1.0, 0.7, 0.5, 0.3, 0.1])
    data = np.random.default_rng(4).standard_normal((400, 8)) * scales
    best = projection_loss(pca(data, 3), data)
    for seed in range(100):
        assert projection_loss(random_orthonormal(8, 3, seed), data) >= best - 1e-8
