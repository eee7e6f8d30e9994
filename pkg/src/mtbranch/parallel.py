"""Replicate blocks farmed out to a process pool, reassembled in replicate order.

Blocks have a fixed size that does not depend on the worker count, and each
replicate draws from its own substream, so results are identical whatever
``MTBRANCH_WORKERS`` says.
"""

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from functools import partial

BLOCK = 500
WORKERS_ENV = "MTBRANCH_WORKERS"


def worker_count(default: int = 1) -> int:
    value = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(value)) if value else default
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {value!r}") from None


def blocks(n: int, block: int = BLOCK):
    return [(lo, min(lo + block, n)) for lo in range(0, n, block)]


def _call(func, args, span):
    return func(*args, *span)


def map_blocks(func, args: tuple, n: int, workers: int | None = None, block: int = BLOCK) -> list:
    """``[func(*args, lo, hi) for each block]`` in block order."""
    spans = blocks(n, block)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(spans) <= 1:
        return [func(*args, lo, hi) for lo, hi in spans]
    ctx = multiprocessing.get_context("fork") if "fork" in multiprocessing.get_all_start_methods() else None
    with ProcessPoolExecutor(max_workers=min(workers, len(spans)), mp_context=ctx) as pool:
        return list(pool.map(partial(_call, func, args), spans))
