"""Slab-parallel helpers.

Work is split into contiguous slabs along one axis and each slab is computed
with the same numpy operations it would see in a serial run, so the result
does not depend on the number of threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np


def slab_bounds(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_ranges(func: Callable[[int, int], np.ndarray], n: int, axis: int,
               threads: int = 1) -> np.ndarray:
    """Evaluate ``func(start, stop)`` on slabs of ``range(n)`` and concatenate
    the results along ``axis``."""
    bounds = slab_bounds(n, threads)
    if threads <= 1 or len(bounds) == 1:
        parts = [func(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ab: func(*ab), bounds))
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=axis)


def map_slabs(func: Callable[[np.ndarray], np.ndarray], arr: np.ndarray, axis: int,
              threads: int = 1) -> np.ndarray:
    """Apply ``func`` to slabs of ``arr`` along ``axis`` and reassemble.

    ``func`` must preserve the slab's length along ``axis`` and must not mix
    values across that axis.
    """

    def run(a, b):
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(a, b)
        return func(arr[tuple(sl)])

    return map_ranges(run, arr.shape[axis], axis, threads)


def window_sum(a: np.ndarray, axis: int, before: int, after: int, mode: str = "constant") -> np.ndarray:
    """Sum over ``[i - before, i + after]`` along ``axis`` via prefix sums.

    ``mode`` is passed to :func:`numpy.pad` (``"constant"`` pads with zeros,
    ``"edge"`` replicates the border). Each output element depends only on
    its own line, so slabbing along any other axis is safe.
    """
    if before == 0 and after == 0:
        return np.array(a, dtype=np.float64, copy=True)
    pad = [(0, 0)] * a.ndim
    pad[axis] = (before + 1, after)
    padded = np.pad(a.astype(np.float64, copy=False), pad, mode=mode)
    # the extra leading element becomes the zero of the prefix sum
    first = [slice(None)] * a.ndim
    first[axis] = slice(0, 1)
    padded[tuple(first)] = 0.0
    c = np.cumsum(padded, axis=axis)
    n = a.shape[axis]
    w = before + after + 1
    hi = [slice(None)] * a.ndim
    lo = [slice(None)] * a.ndim
    hi[axis] = slice(w, w + n)
    lo[axis] = slice(0, n)
    return c[tuple(hi)] - c[tuple(lo)]
