from __future__ import annotations

import numpy as np
import pytest

from olm_tools.householder import (
    HouseholderParams,
    householder_assemble,
    householder_from_basis,
    householder_product,
    n_params,
    null_space_basis,
)
from olm_tools.measurement import MeasurementMatrix, orthonormality_error
from olm_tools.ndgrad import Graph, finite_diff_grad, numpy_ops, value_and_grad


@pytest.mark.parametrize("d, k", [(2, 1), (2, 2), (5, 1), (5, 3), (8, 8)])
def test_n_params(d: int, k: int) -> None:
    assert n_params(d, k) == sum(d - i - 1 for i in range(k))


@pytest.mark.parametrize("d, k", [(2, 1), (5, 3), (16, 4), (6, 6)])
def test_random_parameters_give_orthonormal_columns(d: int, k: int) -> None:
    q = householder_assemble(HouseholderParams.random(d, k, seed=d + k, scale=2.0))
    assert q.matrix.shape == (d, k)
    assert orthonormality_error(q.matrix) < 1e-12


def test_zero_parameters_reflect_the_leading_axes() -> None:
    q = householder_assemble(HouseholderParams.zeros(4, 2))
    assert np.allclose(q.matrix, -np.eye(4, 2))


def test_vectors_are_ragged() -> None:
    params = HouseholderParams(4, 3, np.arange(6.0))
    assert [v.tolist() for v in params.vectors()] == [[0.0, 1.0, 2.0], [3.0, 4.0], [5.0]]


def test_parameter_validation() -> None:
    with pytest.raises(ValueError, match="Expected 3 parameters"):
        HouseholderParams(3, 2, np.zeros(2))
    with pytest.raises(ValueError, match="1 <= k <= d"):
        HouseholderParams.zeros(2, 3)


@pytest.mark.parametrize("d, k", [(3, 1), (6, 2), (5, 5)])
def test_from_basis_spans_the_same_subspace(d: int, k: int) -> None:
    rng = np.random.default_rng(d * k)
    basis, _ = np.linalg.qr(rng.standard_normal((d, k)))
    q = householder_assemble(householder_from_basis(basis)).matrix
    assert np.allclose(q @ q.T, basis @ basis.T, atol=1e-10)


def test_from_basis_accepts_axis_aligned_columns() -> None:
    basis = MeasurementMatrix(np.eye(4, 2))
    q = householder_assemble(householder_from_basis(basis)).matrix
    assert np.allclose(np.abs(q), np.eye(4, 2))


def test_product_on_graph_matches_eager_and_finite_differences() -> None:
    d, k = 5, 2
    params = HouseholderParams.random(d, k, seed=3, scale=0.7)
    weights = np.random.default_rng(4).standard_normal((d, k))

    def objective(phi: np.ndarray) -> float:
        q = householder_product(numpy_ops, phi, d, k)
        return float(np.sum(q * weights))

    graph = Graph()
    phi = graph.leaf("phi", params.phi)
    q = householder_product(graph, phi, d, k)
    graph.set_root(graph.sum(graph.mul(q, graph.constant(weights))))
    assert np.allclose(graph.value(q), householder_assemble(params).matrix)
    value, grads = value_and_grad(graph, {"phi": params.phi}, wrt=["phi"])
    assert value == pytest.approx(objective(params.phi))
    assert np.allclose(grads["phi"], finite_diff_grad(objective, params.phi), atol=1e-6)


def test_null_space_basis_completes_the_matrix() -> None:
    m = householder_assemble(HouseholderParams.random(6, 2, seed=0))
    u = null_space_basis(m)
    assert u.shape == (6, 4)
    assert orthonormality_error(np.hstack([m.matrix, u])) < 1e-10


def test_null_space_basis_rejects_rank_deficient_input() -> None:
    with pytest.raises(ValueError, match="rank deficient"):
        null_space_basis(np.array([[1.0, 2.0], [0.0, 0.0], [0.0, 0.0]]))


@pytest.mark.parametrize("d, k", [(2, 1), (8, 3), (64, 16), (256, 32)])
def test_any_parameters_give_orthonormal_columns(d: int, k: int) -> None:
    for seed in range(250):
        q = householder_assemble(HouseholderParams.random(d, k, seed=seed, scale=1.0))
        assert orthonormality_error(q.matrix) < 1e-10
