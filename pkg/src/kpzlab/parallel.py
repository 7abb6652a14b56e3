"""Order-preserving map over a bounded process pool."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def parallel_map(func, items, workers: int = 1, chunksize: int | None = None) -> list:
    """``[func(x) for x in items]`` evaluated on up to ``workers`` processes.

    Results come back in input order, so anything merged by index is
    independent of the worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    if chunksize is None:
        chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items, chunksize=chunksize))
