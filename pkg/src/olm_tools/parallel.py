from __future__ import annotations

import logging
import os
from typing import TYPE_CHECKING, TypeVar

from dask.bag import from_sequence

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "OLM_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """
    The number of worker threads to use: `threads` if given, else the
    `OLM_THREADS` environment variable, else the cpu count.
    """
    if threads is None:
        raw = os.environ.get(THREADS_ENV)
        if raw is None:
            return os.cpu_count() or 1
        try:
            threads = int(raw)
        except ValueError:
            msg = f"{THREADS_ENV} must be a positive integer, got {raw!r}"
            raise ValueError(msg) from None
    if threads < 1:
        msg = f"Thread count must be at least 1, got {threads}"
        raise ValueError(msg)
    return threads


def parallel_map(
    func: Callable[[T], R], items: Sequence[T], *, threads: int | None = None
) -> list[R]:
    """
    Apply `func` to every element of `items` on a threaded dask bag. Results
    come back in the order of `items`, so reductions over them are independent
    of the number of threads.
    """
    if len(items) == 0:
        return []
    workers = resolve_threads(threads)
    if workers == 1 or len(items) == 1:
        return [func(item) for item in items]
    bag = from_sequence(items, npartitions=min(workers, len(items)))
    return list(bag.map(func).compute(scheduler="threads", num_workers=workers))
