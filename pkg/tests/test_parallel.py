from __future__ import annotations

import pytest

from olm_tools.parallel import THREADS_ENV, parallel_map, resolve_threads


@pytest.mark.parametrize("threads", [1, 2, 5])
def test_parallel_map_keeps_order(threads: int) -> None:
    items = list(range(23))
    assert parallel_map(lambda v: v * v, items, threads=threads) == [v * v for v in items]


def test_parallel_map_empty() -> None:
    assert parallel_map(lambda v: v, [], threads=4) == []


def test_resolve_threads_from_environment(monkeypatch) -> None:
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_threads() == 3
    assert resolve_threads(2) == 2


@pytest.mark.parametrize("raw", ["zero", "0"])
def test_resolve_threads_rejects_bad_values(monkeypatch, raw: str) -> None:
    monkeypatch.setenv(THREADS_ENV, raw)
    with pytest.raises(ValueError):
        resolve_threads()
