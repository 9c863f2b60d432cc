"""Thread-count control and reductions whose result does not depend on it.

Work is always split into the same fixed chunks; threads only decide who
computes which chunk. Partial results are combined in chunk order, and
scalar totals go through ``math.fsum`` (exactly rounded), so outputs are
bit-identical for any thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

TILE = 4096

_threads: int | None = None


def set_threads(count: int | None) -> None:
    """Fix the worker count; ``None`` restores the default."""
    global _threads
    if count is not None and count < 1:
        raise ValueError("thread count must be >= 1")
    _threads = count


def get_threads() -> int:
    if _threads is not None:
        return _threads
    env = os.environ.get("THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def pmap(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Ordered map over ``items``, threaded when more than one worker is set."""
    workers = min(get_threads(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def det_sum(values: np.ndarray | Iterable[float]) -> float:
    """Sum with a fixed tile layout: pairwise inside tiles, fsum across."""
    a = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    pad = (-a.size) % TILE
    if pad:
        a = np.concatenate([a, np.zeros(pad)])
    return math.fsum(a.reshape(-1, TILE).sum(axis=1).tolist())


def chunk_ranges(total: int, size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


class KahanArray:
    """Elementwise compensated accumulator for arrays of a fixed shape."""

    def __init__(self, shape: tuple[int, ...]):
        self.total = np.zeros(shape)
        self.comp = np.zeros(shape)

    def add(self, index, term: np.ndarray) -> None:
        s = self.total[index]
        y = term - self.comp[index]
        t = s + y
        self.comp[index] = (t - s) - y
        self.total[index] = t

    def value(self) -> np.ndarray:
        return self.total - self.comp
