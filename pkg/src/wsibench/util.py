"""Small shared helpers: worker pools and deterministic parallel mapping."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "WSIBENCH_THREADS"


def worker_count(requested: int | None = None) -> int:
    """Resolve the effective worker count, capped by WSIBENCH_THREADS."""
    n = requested if requested and requested > 0 else 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return min(n, os.cpu_count() or 1)


def ordered_map(fn: Callable[[T], R], items: Sequence[T] | Iterable[T], workers: int = 1) -> list[R]:
    """Map fn over items, preserving input order in the result.

    With workers > 1 the calls run on a thread pool; results are still
    collected in input order, so output is identical to the sequential run.
    """
    items = list(items)
    n = worker_count(workers)
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def round_half_up(x) -> "np.ndarray":
    """Round to nearest integer with .5 going up (numpy rounds to even)."""
    import numpy as np

    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)
