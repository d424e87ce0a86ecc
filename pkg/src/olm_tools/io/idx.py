"""
Reading and writing the big-endian IDX container used by MNIST-style archives.

The magic number is two zero bytes, a type code (0x08 for unsigned bytes) and
the rank. Images use 0x00000803, labels 0x00000801.
"""

from __future__ import annotations

import struct
from typing import TYPE_CHECKING

import backoff
import fsspec
import numpy as np

if TYPE_CHECKING:
    import numpy.typing as npt

    from olm_tools.type import PathLike

UBYTE = 0x08
IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def parse_idx(buffer: bytes, rank: int) -> npt.NDArray[np.uint8]:
    """
    Parse an unsigned-byte IDX buffer of the given rank.
    """
    if len(buffer) < 4:
        msg = f"Truncated IDX header: got {len(buffer)} bytes"
        raise ValueError(msg)
    (magic,) = struct.unpack(">I", buffer[:4])
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != UBYTE:
        msg = f"Bad IDX magic number {magic:#010x}; expected an unsigned-byte container"
        raise ValueError(msg)
    found_rank = magic & 0xFF
    if found_rank != rank:
        msg = f"Expected an IDX container of rank {rank}, got rank {found_rank}"
        raise ValueError(msg)
    offset = 4 + 4 * rank
    if len(buffer) < offset:
        msg = f"Truncated IDX header: rank {rank} needs {offset} bytes, got {len(buffer)}"
        raise ValueError(msg)
    dims = struct.unpack(f">{rank}I", buffer[4:offset])
    count = int(np.prod(dims, dtype=np.int64))
    if len(buffer) - offset < count:
        msg = (
            f"Truncated IDX payload: dimensions {dims} need {count} bytes, "
            f"got {len(buffer) - offset}"
        )
        raise ValueError(msg)
    payload = np.frombuffer(buffer, dtype=np.uint8, count=count, offset=offset)
    return payload.reshape(dims)


@backoff.on_exception(backoff.expo, (ConnectionError, TimeoutError), max_tries=4)
def read_bytes(path: PathLike) -> bytes:
    """
    Read a whole file, decompressing it when the suffix names a compression.
    """
    with fsspec.open(str(path), mode="rb", compression="infer") as fh:
        return fh.read()


def read_idx(path: PathLike, rank: int) -> npt.NDArray[np.uint8]:
    return parse_idx(read_bytes(path), rank)


def encode_idx(array: npt.ArrayLike) -> bytes:
    data = np.asarray(array)
    if data.dtype != np.uint8:
        msg = f"IDX writing supports uint8 arrays only, got {data.dtype}"
        raise ValueError(msg)
    magic = (UBYTE << 8) | data.ndim
    header = struct.pack(">I", magic) + struct.pack(f">{data.ndim}I", *data.shape)
    return header + data.tobytes(order="C")


def write_idx(path: PathLike, array: npt.ArrayLike) -> None:
    with fsspec.open(str(path), mode="wb", compression="infer") as fh:
        fh.write(encode_idx(array))
