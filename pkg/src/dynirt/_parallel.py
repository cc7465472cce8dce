from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

from threadpoolctl import threadpool_limits

WORKERS_ENV = "DYNIRT_WORKERS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _init_worker():
    # single-threaded BLAS everywhere keeps results independent of the worker count
    threadpool_limits(1)


def pmap(fn, items, workers: int = 1) -> list:
    """Order-preserving map, optionally across processes."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        with threadpool_limits(1):
            return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as ex:
        return list(ex.map(fn, items, chunksize=chunk))
