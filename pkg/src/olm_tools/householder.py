"""
Orthonormal d x k matrices as products of Householder reflections.

Reflector i (0-based) acts on coordinates i..d-1 through the vector
v_i = [0,...,0, 1, u_i] with u_i of length d - i - 1, and
H_i = I − τ_i v_i v_iᵀ with τ_i = 2 / ‖v_i‖² = 2 / (1 + ‖u_i‖²). The matrix
Q = H_0 H_1 ... H_{k-1} E, with E the first k columns of the identity, has
orthonormal columns for every finite choice of the u_i, so optimizing over the
free parameters never leaves the set of orthonormal matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np

from olm_tools.measurement import MeasurementMatrix, orthonormality_error
from olm_tools.ndgrad import as_tensor, numpy_ops
from olm_tools.rng import generator

if TYPE_CHECKING:
    import numpy.typing as npt

    from olm_tools.type import Tensor


def n_params(d: int, k: int) -> int:
    """
    Number of free parameters of k reflectors in d dimensions.
    """
    return k * (d - 1) - k * (k - 1) // 2


def _offsets(d: int, k: int) -> list[int]:
    return [i * (d - 1) - i * (i - 1) // 2 for i in range(k + 1)]


def _check_dims(d: int, k: int) -> None:
    if not 1 <= k <= d:
        msg = f"Need 1 <= k <= d, got d={d} and k={k}"
        raise ValueError(msg)


@dataclass(frozen=True)
class HouseholderParams:
    """
    The free parameters of k reflectors in d dimensions, stored flat:
    `phi` is u_0, u_1, ..., u_{k-1} concatenated.
    """

    d: int
    k: int
    phi: Tensor

    def __post_init__(self) -> None:
        _check_dims(self.d, self.k)
        phi = as_tensor(self.phi)
        expected = n_params(self.d, self.k)
        if phi.shape != (expected,):
            msg = f"Expected {expected} parameters for d={self.d}, k={self.k}, got shape {phi.shape}"
            raise ValueError(msg)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def zeros(cls, d: int, k: int) -> HouseholderParams:
        _check_dims(d, k)
        return cls(d, k, np.zeros(n_params(d, k)))

    @classmethod
    def random(cls, d: int, k: int, seed: int, scale: float = 0.1) -> HouseholderParams:
        _check_dims(d, k)
        return cls(d, k, scale * generator(seed).standard_normal(n_params(d, k)))

    def vectors(self) -> list[Tensor]:
        """
        The ragged parameter vectors u_i.
        """
        bounds = _offsets(self.d, self.k)
        return [self.phi[bounds[i] : bounds[i + 1]] for i in range(self.k)]


def householder_product(ops: Any, phi: Any, d: int, k: int) -> Any:
    """
    Assemble Q(phi) on `ops`, where `phi` is a handle of the flat parameters.
    """
    _check_dims(d, k)
    bounds = _offsets(d, k)
    cols = ops.constant(np.eye(d, k))
    one = ops.constant(np.ones(1))
    for i in reversed(range(k)):
        parts = [one]
        if i > 0:
            parts.insert(0, ops.constant(np.zeros(i)))
        if bounds[i + 1] > bounds[i]:
            u = ops.slice(phi, (slice(bounds[i], bounds[i + 1]),))
            parts.append(u)
            tau = ops.div(2.0, ops.add(1.0, ops.sum(ops.square(u))))
        else:
            tau = ops.constant(2.0)
        v = ops.reshape(ops.concat(parts, axis=0), (d, 1))
        projection = ops.matmul(v, ops.matmul(ops.transpose(v), cols))
        cols = ops.sub(cols, ops.mul(projection, tau))
    return cols


def householder_assemble(params: HouseholderParams) -> MeasurementMatrix:
    """
    The orthonormal d x k matrix Q(phi).
    """
    q = householder_product(numpy_ops, params.phi, params.d, params.k)
    return MeasurementMatrix(np.array(q))


def householder_from_basis(basis: MeasurementMatrix | npt.ArrayLike) -> HouseholderParams:
    """
    Parameters whose Q spans the same subspace as the columns of `basis`.

    The reflectors come from the Householder QR factorization of `basis`;
    columns of the result may differ from `basis` in sign.
    """
    matrix = basis.matrix if isinstance(basis, MeasurementMatrix) else as_tensor(basis)
    d, k = matrix.shape
    _check_dims(d, k)
    h, _ = np.linalg.qr(matrix, mode="raw")
    reflectors = h.T
    phi = np.concatenate([reflectors[i + 1 :, i] for i in range(k)])
    return HouseholderParams(d, k, phi)


def null_space_basis(M: MeasurementMatrix | npt.ArrayLike, *, tol: float = 1e-10) -> Tensor:
    """
    An orthonormal basis U (d x (d − k)) of the complement of span(M), so
    that [M U] is square orthonormal.
    """
    matrix = M.matrix if isinstance(M, MeasurementMatrix) else as_tensor(M)
    d, k = matrix.shape
    q, r = np.linalg.qr(matrix, mode="complete")
    if np.min(np.abs(np.diag(r[:k]))) < tol:
        msg = f"Measurement matrix of shape {matrix.shape} is rank deficient"
        raise ValueError(msg)
    basis = np.ascontiguousarray(q[:, k:])
    assert orthonormality_error(np.hstack([matrix, basis])) < 1e-8
    return basis
