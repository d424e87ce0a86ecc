"""
Orthonormal measurement matrices and their on-disk form.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from olm_tools.io.core import read, write
from olm_tools.io.sidecar import parse_ints, read_sidecar, sidecar_path, write_sidecar
from olm_tools.ndgrad import as_tensor

if TYPE_CHECKING:
    import numpy.typing as npt

    from olm_tools.type import Attrs, PathLike, Tensor

logger = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-8


def orthonormality_error(matrix: npt.ArrayLike) -> float:
    """
    The largest entry of |MᵀM − I|.
    """
    m = np.asarray(matrix, dtype=np.float64)
    return float(np.max(np.abs(m.T @ m - np.eye(m.shape[1]))))


@dataclass(frozen=True)
class MeasurementMatrix:
    """
    A d x k matrix with orthonormal columns. `attrs` carries provenance such as
    the method that produced it.
    """

    matrix: Tensor
    attrs: Attrs = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        matrix = as_tensor(self.matrix)
        if matrix.ndim != 2:
            msg = f"A measurement matrix must be 2-D, got shape {matrix.shape}"
            raise ValueError(msg)
        d, k = matrix.shape
        if not 1 <= k <= d:
            msg = f"Need 1 <= k <= d for a measurement matrix, got d={d} and k={k}"
            raise ValueError(msg)
        error = orthonormality_error(matrix)
        if error >= ORTHONORMAL_TOL:
            msg = f"Columns are not orthonormal: max |MᵀM - I| = {error:.3e}"
            raise ValueError(msg)
        object.__setattr__(self, "matrix", matrix)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]

    def measure(self, x: npt.ArrayLike) -> Tensor:
        """
        Measurements `x @ M` of the rows of `x`.
        """
        return np.asarray(x, dtype=np.float64) @ self.matrix

    def with_attrs(self, **attrs: object) -> MeasurementMatrix:
        return MeasurementMatrix(self.matrix, {**self.attrs, **attrs})  # type: ignore[dict-item]


def fingerprint(*arrays: npt.ArrayLike) -> str:
    """
    Short sha256 digest of the bytes of `arrays`, used to tie a stored matrix to
    the data it was fit on.
    """
    digest = hashlib.sha256()
    for array in arrays:
        a = np.ascontiguousarray(array, dtype=np.float64)
        digest.update(str(a.shape).encode())
        digest.update(a.tobytes())
    return digest.hexdigest()[:16]


def save_measurement(m: MeasurementMatrix, path: PathLike, **meta: object) -> None:
    """
    Write `m` as an OLMT tensor with a sidecar recording its size and
    provenance. Keys in `meta` override those in `m.attrs`.
    """
    entries: dict[str, object] = {"d": m.d, "k": m.k}
    entries.update({key: value for key, value in m.attrs.items() if value is not None})
    entries.update(meta)
    for key in ("objective", "seed", "fingerprint"):
        entries.setdefault(key, "none")
    write(path, m.matrix)
    write_sidecar(sidecar_path(path), entries)
    logger.info("Wrote %dx%d measurement matrix to %s", m.d, m.k, path)


def load_measurement(path: PathLike) -> MeasurementMatrix:
    matrix = read(path)
    meta = read_sidecar(sidecar_path(path))
    (d,) = parse_ints(meta.pop("d"))
    (k,) = parse_ints(meta.pop("k"))
    if matrix.shape != (d, k):
        msg = f"Sidecar of {path} records shape {(d, k)} but the tensor has shape {matrix.shape}"
        raise ValueError(msg)
    return MeasurementMatrix(matrix, dict(meta))
