"""
Binary greyscale PGM (P5) images with 8-bit samples.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import fsspec
import numpy as np

if TYPE_CHECKING:
    import numpy.typing as npt

    from olm_tools.type import PathLike


def encode_pgm(image: npt.ArrayLike) -> bytes:
    data = np.asarray(image)
    if data.ndim != 2 or data.dtype != np.uint8:
        msg = f"PGM images must be 2-D uint8 arrays, got {data.dtype} with shape {data.shape}"
        raise ValueError(msg)
    height, width = data.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + data.tobytes(order="C")


def decode_pgm(buffer: bytes) -> npt.NDArray[np.uint8]:
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(buffer) and buffer[pos : pos + 1].isspace():
            pos += 1
        if buffer[pos : pos + 1] == b"#":
            pos = buffer.index(b"\n", pos)
            continue
        start = pos
        while pos < len(buffer) and not buffer[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            msg = "Truncated PGM header"
            raise ValueError(msg)
        fields.append(buffer[start:pos])
    magic, width, height, maxval = fields
    if magic != b"P5" or int(maxval) != 255:
        msg = f"Only binary 8-bit PGM is supported, got magic {magic!r} and maxval {maxval!r}"
        raise ValueError(msg)
    pos += 1
    shape = (int(height), int(width))
    payload = buffer[pos:]
    if len(payload) != shape[0] * shape[1]:
        msg = f"PGM payload for {shape} needs {shape[0] * shape[1]} bytes, got {len(payload)}"
        raise ValueError(msg)
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape)


def write_pgm(path: PathLike, image: npt.ArrayLike) -> None:
    with fsspec.open(str(path), mode="wb") as fh:
        fh.write(encode_pgm(image))


def read_pgm(path: PathLike) -> npt.NDArray[np.uint8]:
    with fsspec.open(str(path), mode="rb") as fh:
        return decode_pgm(fh.read())
