"""
Classical measurement matrices to compare optimized ones against: principal
components, random orthonormal directions and independent components.
"""

from __future__ import annotations

import logging
import warnings
from typing import TYPE_CHECKING

import numpy as np

from olm_tools.datasets import as_matrix
from olm_tools.measurement import MeasurementMatrix
from olm_tools.rng import generator

if TYPE_CHECKING:
    import numpy.typing as npt

    from olm_tools.datasets import Dataset
    from olm_tools.type import Tensor

logger = logging.getLogger(__name__)


def _centered(data: Dataset | npt.ArrayLike) -> Tensor:
    x = as_matrix(data)
    return x - x.mean(axis=0)


def _fix_signs(vectors: Tensor) -> Tensor:
    # the entry of largest magnitude in every column is positive
    rows = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[rows, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def principal_components(data: Dataset | npt.ArrayLike) -> tuple[Tensor, Tensor]:
    """
    Eigenvalues and eigenvectors of the empirical covariance (1/N
    normalization) of the mean-subtracted rows of `data`.

    Returns
    -------
    Eigenvalues in descending order, and the d x d matrix of eigenvectors as
    columns in the same order. The entry of largest magnitude in each
    eigenvector is positive.
    """
    x = _centered(data)
    cov = x.T @ x / len(x)
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values)[::-1]
    return values[order], _fix_signs(vectors[:, order])


def pca(train: Dataset | npt.ArrayLike, k: int) -> MeasurementMatrix:
    """
    Projection onto the k leading principal components of `train`.
    """
    data = as_matrix(train)
    n, d = data.shape
    if not 1 <= k < d:
        msg = f"PCA needs 1 <= k < d, got k={k} for d={d}"
        raise ValueError(msg)
    if n <= k:
        msg = f"PCA with k={k} needs more than {k} examples, got {n}"
        raise ValueError(msg)
    _, vectors = principal_components(data)
    return MeasurementMatrix(vectors[:, :k], {"method": "pca"})


def projection_loss(M: MeasurementMatrix | npt.ArrayLike, data: Dataset | npt.ArrayLike) -> float:
    """
    Mean squared distance (1/N)Σ‖x̃ − MMᵀx̃‖² of the mean-subtracted rows x̃
    of `data` to the span of M.
    """
    matrix = M.matrix if isinstance(M, MeasurementMatrix) else np.asarray(M, dtype=np.float64)
    x = _centered(data)
    residual = x - (x @ matrix) @ matrix.T
    return float(np.mean(np.sum(residual**2, axis=1)))


def random_orthonormal(d: int, k: int, seed: int) -> MeasurementMatrix:
    """
    k orthonormal directions drawn uniformly (Haar) in d dimensions.
    """
    if not 1 <= k <= d:
        msg = f"Need 1 <= k <= d, got d={d} and k={k}"
        raise ValueError(msg)
    gaussian = generator(seed).standard_normal((d, k))
    q, r = np.linalg.qr(gaussian)
    q = q * np.sign(np.diag(r))
    return MeasurementMatrix(q, {"method": "random", "seed": seed})


def _sym_decorrelation(w: Tensor) -> Tensor:
    # W <- (W Wᵀ)^{-1/2} W
    s, u = np.linalg.eigh(w @ w.T)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


def _polar(a: Tensor) -> Tensor:
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    return u @ vt


def fast_ica(
    train: Dataset | npt.ArrayLike,
    k: int,
    seed: int = 0,
    *,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> MeasurementMatrix:
    """
    Independent component directions of `train` by symmetric FastICA.

    The data is whitened inside the span of its k leading principal
    components, the unmixing matrix is found by the fixed-point iteration with
    the tanh (log cosh) contrast and symmetric decorrelation, and the
    resulting unmixing filters are mapped back to data space and made
    orthonormal by polar decomposition.

    Parameters
    ----------
    train: dataset or array-like
        n x d data with n > d.
    k: int
        Number of components, 1 <= k <= d.
    seed: int
        Seed of the initial unmixing matrix.
    max_iter: int
        Iteration cap. When it is reached without convergence a warning is
        issued and the iterate with the smallest update is returned, with
        `attrs["converged"]` set to False.
    tol: float
        Convergence threshold on max |1 − |diag(W_new W_oldᵀ)||.
    """
    data = as_matrix(train)
    n, d = data.shape
    if not 1 <= k <= d:
        msg = f"ICA needs 1 <= k <= d, got k={k} for d={d}"
        raise ValueError(msg)
    if n <= d:
        msg = f"ICA needs more examples than dimensions, got n={n} for d={d}"
        raise ValueError(msg)
    values, vectors = principal_components(data)
    scale = np.sqrt(np.maximum(values[:k], np.finfo(np.float64).tiny))
    whitening = vectors[:, :k] / scale
    z = _centered(data) @ whitening

    w = _sym_decorrelation(generator(seed).standard_normal((k, k)))
    best_w, best_lim = w, np.inf
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        gz = np.tanh(z @ w.T)
        g_prime = 1.0 - gz**2
        w_new = _sym_decorrelation(gz.T @ z / n - g_prime.mean(axis=0)[:, None] * w)
        lim = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0)))
        w = w_new
        if lim < best_lim:
            best_w, best_lim = w, lim
        if lim < tol:
            converged = True
            break
    if not converged:
        msg = f"FastICA did not converge in {max_iter} iterations (last change {best_lim:.3e}); returning the best iterate"
        warnings.warn(msg, stacklevel=2)
        w = best_w
    logger.info("FastICA with k=%d finished after %d iterations", k, n_iter)

    filters = _fix_signs(_polar(whitening @ w.T))
    return MeasurementMatrix(
        filters, {"method": "ica", "seed": seed, "converged": converged, "n_iter": n_iter}
    )
