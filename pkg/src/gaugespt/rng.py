"""Counter-based random streams.

Every simulated path draws from its own Philox stream whose 128-bit key is
``(path_index << 64) | seed``.  A path's increments therefore depend only on
``(seed, path_index)`` and not on how many paths ran before it, or on which
thread ran it.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

T = TypeVar("T")

THREADS_ENV = "GAUGESPT_THREADS"

_U64 = (1 << 64) - 1


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Return the generator for one path of an ensemble."""
    seed = int(seed)
    path_index = int(path_index)
    if not 0 <= seed <= _U64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    if not 0 <= path_index <= _U64:
        raise ValueError(f"path_index must be a non-negative 64-bit integer, got {path_index}")
    return np.random.Generator(np.random.Philox(key=(path_index << 64) | seed))


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def ordered_map(fn: Callable[[int], T], indices: Iterable[int], threads: int | None = None) -> list[T]:
    """Apply ``fn`` to each index; results come back in index order.

    With more than one thread the work is spread over a pool, but since every
    path owns its stream the output is identical to the sequential run.
    """
    indices = list(indices)
    threads = thread_count() if threads is None else max(int(threads), 1)
    if threads == 1 or len(indices) < 2:
        return [fn(i) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, indices))
