from __future__ import annotations

import struct

import numpy as np
import pytest

from olm_tools.io.olmt import MAGIC, decode, encode, read_tensor, write_tensor
from olm_tools.ndgrad import NonFiniteError


def test_header_layout() -> None:
    data = np.arange(6, dtype=np.float64).reshape(2, 3)
    buffer = encode(data)
    assert buffer[:4] == MAGIC
    assert struct.unpack("<I", buffer[4:8]) == (2,)
    assert struct.unpack("<2Q", buffer[8:24]) == (2, 3)
    assert len(buffer) == 24 + 8 * 6
    assert struct.unpack("<d", buffer[24:32]) == (0.0,)
    assert struct.unpack("<d", buffer[-8:]) == (5.0,)


@pytest.mark.parametrize("shape", [(), (5,), (3, 4), (2, 1, 3)])
def test_write_read(tmp_path, shape: tuple[int, ...]) -> None:
    data = np.random.default_rng(0).standard_normal(shape)
    path = tmp_path / "tensor.olmt"
    write_tensor(path, data)
    observed = read_tensor(path)
    assert observed.dtype == np.float64
    assert observed.shape == shape
    assert np.array_equal(observed, data)


def test_decode_rejects_bad_magic() -> None:
    buffer = b"NOPE" + encode(np.zeros(2))[4:]
    with pytest.raises(ValueError, match="magic"):
        decode(buffer)


def test_decode_rejects_truncated_payload() -> None:
    buffer = encode(np.zeros((2, 2)))[:-3]
    with pytest.raises(ValueError, match="needs"):
        decode(buffer)


def test_encode_rejects_non_finite() -> None:
    with pytest.raises(NonFiniteError):
        encode(np.array([1.0, np.nan]))
