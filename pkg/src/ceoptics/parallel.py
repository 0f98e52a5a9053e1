"""Deterministic parallel helpers.

Work items are always reduced in index order through a fixed pairwise
tree, so results are bitwise identical for any worker count (and equal
to the sequential mode). Threads are enough here: the heavy lifting
inside each item is numpy/FFT code that releases the GIL.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Map fn over items, preserving input order in the output."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def pairwise_sum(values: Sequence):
    """Sum values through a fixed pairwise tree over the input order.

    The association pattern depends only on len(values), never on
    scheduling, which keeps float summation reproducible.
    """
    vals = list(values)
    if not vals:
        raise ValueError("pairwise_sum needs at least one value")
    while len(vals) > 1:
        nxt = []
        for i in range(0, len(vals) - 1, 2):
            nxt.append(vals[i] + vals[i + 1])
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]


def parallel_sum(fn: Callable, items: Iterable, workers: int = 1):
    """Evaluate fn on every item and pairwise-sum the results."""
    return pairwise_sum(parallel_map(fn, list(items), workers=workers))
