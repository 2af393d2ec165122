"""Order-preserving replicate map over worker processes.

Results come back in task order whatever the worker count, and each task
derives its randomness from its own seed key, so the output does not depend
on how tasks were scheduled.
"""
from __future__ import annotations

import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def _context():
    methods = mp.get_all_start_methods()
    return mp.get_context("fork" if "fork" in methods else methods[0])


def replicate_map(fn: Callable[[T], R], tasks: Sequence[T], workers: int = 1) -> List[R]:
    """``[fn(t) for t in tasks]``, optionally spread over ``workers`` processes."""
    tasks = list(tasks)
    if workers < 1:
        raise ValueError(f"worker count must be at least 1, got {workers}")
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, math.ceil(len(tasks) / (4 * workers)))
    with ProcessPoolExecutor(max_workers=workers, mp_context=_context()) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))
