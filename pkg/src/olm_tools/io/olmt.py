"""
The OLMT tensor container: the magic bytes `OLMT`, a little-endian u32 rank,
`rank` little-endian u64 dimensions, then float64 data in row-major order.
"""

from __future__ import annotations

import struct
from typing import TYPE_CHECKING

import fsspec
import numpy as np

from olm_tools.ndgrad import as_tensor

if TYPE_CHECKING:
    import numpy.typing as npt

    from olm_tools.type import PathLike, Tensor

MAGIC = b"OLMT"
_RANK = struct.Struct("<I")


def encode(array: npt.ArrayLike) -> bytes:
    data = as_tensor(array)
    header = MAGIC + _RANK.pack(data.ndim) + struct.pack(f"<{data.ndim}Q", *data.shape)
    return header + data.astype("<f8").tobytes(order="C")


def decode(buffer: bytes) -> Tensor:
    if buffer[:4] != MAGIC:
        msg = f"Expected the OLMT magic bytes, got {buffer[:4]!r}"
        raise ValueError(msg)
    if len(buffer) < 8:
        msg = "Truncated OLMT header"
        raise ValueError(msg)
    (rank,) = _RANK.unpack_from(buffer, 4)
    offset = 8 + 8 * rank
    if len(buffer) < offset:
        msg = f"Truncated OLMT header: rank {rank} needs {offset} bytes, got {len(buffer)}"
        raise ValueError(msg)
    shape = struct.unpack_from(f"<{rank}Q", buffer, 8)
    count = int(np.prod(shape, dtype=np.int64))
    expected = offset + 8 * count
    if len(buffer) != expected:
        msg = f"OLMT payload for shape {shape} needs {expected} bytes, got {len(buffer)}"
        raise ValueError(msg)
    data = np.frombuffer(buffer, dtype="<f8", count=count, offset=offset)
    return data.astype(np.float64).reshape(shape)


def write_tensor(path: PathLike, array: npt.ArrayLike) -> None:
    with fsspec.open(str(path), mode="wb") as fh:
        fh.write(encode(array))


def read_tensor(path: PathLike) -> Tensor:
    with fsspec.open(str(path), mode="rb") as fh:
        return decode(fh.read())
