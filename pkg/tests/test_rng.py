from __future__ import annotations

import numpy as np
import pytest

from olm_tools.rng import chain_keys, counter_generator, counter_normal, derive_seed, generator


def test_generator_streams() -> None:
    a = generator(7, 1).standard_normal(5)
    assert np.array_equal(a, generator(7, 1).standard_normal(5))
    assert not np.array_equal(a, generator(7, 2).standard_normal(5))
    assert not np.array_equal(a, generator(8, 1).standard_normal(5))


def test_generator_rejects_negative_keys() -> None:
    with pytest.raises(ValueError, match="non-negative"):
        generator(1, -1)


def test_derive_seed() -> None:
    assert derive_seed(3, 1) == derive_seed(3, 1)
    assert derive_seed(3, 1) != derive_seed(3, 2)
    assert 0 <= derive_seed(3, 1) < 2**64


def test_chain_keys_depend_on_global_item() -> None:
    whole = chain_keys(6, 2)
    tail = chain_keys(2, 2, item_offset=4)
    assert np.array_equal(whole[8:], tail)
    assert len(np.unique(whole)) == 12


def test_counter_normal_is_independent_of_batching() -> None:
    keys = chain_keys(10, 3)
    full = counter_normal(5, keys, step=4, d=7)
    parts = np.concatenate([counter_normal(5, keys[:4], 4, 7), counter_normal(5, keys[4:], 4, 7)])
    assert full.shape == (30, 7)
    assert np.array_equal(full, parts)


def test_counter_normal_varies_with_step_and_seed() -> None:
    keys = chain_keys(4, 1)
    base = counter_normal(5, keys, 1, 3)
    assert not np.array_equal(base, counter_normal(5, keys, 2, 3))
    assert not np.array_equal(base, counter_normal(6, keys, 1, 3))


def test_counter_normal_moments() -> None:
    draws = counter_normal(0, chain_keys(4000, 1), 0, 5).ravel()
    assert abs(draws.mean()) < 0.05
    assert abs(draws.std() - 1.0) < 0.05


def test_counter_generator_blocks_do_not_overlap() -> None:
    long = counter_generator(5, 9, 0).standard_normal(64)
    assert not np.any(np.isin(counter_generator(5, 9, 1).standard_normal(8), long))
    assert np.array_equal(counter_normal(5, [9], 1, 8)[0], counter_generator(5, 9, 1).standard_normal(8))
    with pytest.raises(ValueError, match="64-bit"):
        counter_generator(-1, 0, 0)
