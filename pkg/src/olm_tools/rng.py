"""
Seeded random streams.

Two flavours are provided, both backed by the counter-based Philox bit
generator. `generator` returns a numpy `Generator` keyed by a seed and any
number of integer keys. `counter_normal` produces standard normal draws whose
value depends only on (seed, row key, step, coordinate), so a chain gets the
same noise no matter how rows are batched or how many threads evaluate them.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    import numpy.typing as npt

    from olm_tools.type import Tensor

_WORD = 64
_MAX_WORD = 1 << _WORD


def generator(seed: int, *keys: int) -> np.random.Generator:
    """
    A Philox-backed generator for the stream identified by `seed` and `keys`.
    """
    if seed < 0 or any(key < 0 for key in keys):
        msg = f"Seeds and stream keys must be non-negative, got {(seed, *keys)}"
        raise ValueError(msg)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))


def derive_seed(seed: int, *keys: int) -> int:
    """
    Derive a child seed from `seed` and `keys`.
    """
    state = np.random.SeedSequence([seed, *keys]).generate_state(1, dtype=np.uint64)
    return int(state[0])




def counter_generator(seed: int, key: int, step: int) -> np.random.Generator:
    """
    The Philox stream at counter block `step` of the key (seed, key).

    Each step owns its own block of 2⁶⁴ counters, so the draws of one step
    never overlap those of the next.
    """
    seed, key, step = int(seed), int(key), int(step)
    if not (0 <= seed < _MAX_WORD and 0 <= key < _MAX_WORD and 0 <= step < _MAX_WORD):
        msg = f"Seed, key and step must be 64-bit non-negative integers, got {(seed, key, step)}"
        raise ValueError(msg)
    bits = np.random.Philox(key=(seed << _WORD) | key, counter=step << _WORD)
    return np.random.Generator(bits)


def chain_keys(
    n_items: int, n_samples: int, *, item_offset: int = 0
) -> npt.NDArray[np.uint64]:
    """
    Stream keys for `n_items * n_samples` chains, item-major. The key of a chain
    depends only on its global item index and its sample index.
    """
    items = np.repeat(np.arange(item_offset, item_offset + n_items, dtype=np.uint64), n_samples)
    samples = np.tile(np.arange(n_samples, dtype=np.uint64), n_items)
    return (items << np.uint64(32)) | samples


def counter_normal(
    seed: int, keys: npt.ArrayLike, step: int, d: int
) -> Tensor:
    """
    Standard normal draws of shape `(len(keys), d)` for one step of every
    row key.
    """
    keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    out = np.empty((len(keys), d))
    for row, key in enumerate(keys):
        out[row] = counter_generator(seed, int(key), step).standard_normal(d)
    return out
