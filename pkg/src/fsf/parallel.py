"""Deterministic block-parallel execution.

Work is split into fixed-size blocks whose boundaries depend only on the
problem size, never on the worker count. Each block is pure numpy on
immutable inputs, and callers combine block results in block order, so
outputs are bit-identical for any number of threads (FSF_THREADS=1, 2, 8,
...).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence


def thread_count(override: int | None = None) -> int:
    """Worker thread cap: FSF_THREADS env var, 0 or unset = auto."""
    if override is not None and override > 0:
        return override
    raw = os.environ.get("FSF_THREADS", "0").strip()
    try:
        n = int(raw) if raw else 0
    except ValueError:
        n = 0
    if n <= 0:
        return min(os.cpu_count() or 1, 8)
    return n


def block_ranges(n_items: int, block_size: int) -> list[tuple[int, int]]:
    """Fixed [start, stop) partition of range(n_items)."""
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    return [(s, min(s + block_size, n_items)) for s in range(0, n_items, block_size)]


def run_blocks(fn: Callable[[int, int], object], ranges: Sequence[tuple[int, int]],
               threads: int | None = None) -> list:
    """Apply fn(start, stop) to every block; results returned in block order."""
    n = thread_count(threads)
    if n <= 1 or len(ranges) <= 1:
        return [fn(s, e) for s, e in ranges]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda r: fn(r[0], r[1]), ranges))
