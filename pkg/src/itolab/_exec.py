"""Deterministic chunked execution of ensemble work.

Trajectories are split into fixed-size chunks; each chunk owns a child
random stream derived from its chunk index, so the partition (and hence
every draw) depends only on the trajectory count, never on the worker
count.  Threads only change scheduling; results are assembled by chunk
index.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

CHUNK = 4096
THREADS_ENV = "ITO_LAB_THREADS"

T = TypeVar("T")


def worker_count(explicit: int | None = None) -> int:
    if explicit is not None:
        return max(1, int(explicit))
    env = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def chunk_ranges(n: int, chunk: int = CHUNK) -> list[tuple[int, int]]:
    return [(start, min(start + chunk, n)) for start in range(0, n, chunk)]


def run_chunks(
    fn: Callable[[int, int, int], T], n: int, threads: int | None = None
) -> Sequence[T]:
    """Run fn(chunk_index, start, stop) over all chunks, ordered by index."""
    ranges = chunk_ranges(n)
    workers = worker_count(threads)
    if workers == 1 or len(ranges) == 1:
        return [fn(i, a, b) for i, (a, b) in enumerate(ranges)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, i, a, b) for i, (a, b) in enumerate(ranges)]
        return [f.result() for f in futures]
