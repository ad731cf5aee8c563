"""Seed derivation and schedule-independent parallel replication.

A replication is identified by ``(master_seed, rep)``; its 64-bit seed is
derived by hashing that pair through :class:`numpy.random.SeedSequence`, and
its normals come from a counter-based Philox stream keyed by that seed.
Replications are grouped into fixed-size chunks, so the arithmetic done on a
chunk never depends on how many workers are used.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

CHUNK_SIZE = 32


def derive_seed(master_seed: int, *path: int) -> int:
    """64-bit seed for the stream at ``path`` below ``master_seed``."""
    if master_seed < 0 or any(p < 0 for p in path):
        raise ValueError("seeds and path entries must be nonnegative")
    ss = np.random.SeedSequence([int(master_seed), *map(int, path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def rep_seeds(master_seed: int, reps: int, start: int = 0) -> list[int]:
    return [derive_seed(master_seed, r) for r in range(start, start + reps)]


def default_workers() -> int:
    env = os.environ.get("DGFF_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def chunk_ranges(n: int, chunk_size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    return [(a, min(a + chunk_size, n)) for a in range(0, n, chunk_size)]


def map_chunks(
    fn: Callable[..., object],
    n: int,
    args: Sequence = (),
    workers: int | None = None,
    chunk_size: int = CHUNK_SIZE,
) -> list:
    """Call ``fn(start, stop, *args)`` on every chunk of ``range(n)``.

    Results are returned in chunk order. ``fn`` must be a module-level
    function when ``workers > 1``.
    """
    ranges = chunk_ranges(n, chunk_size)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(ranges) <= 1:
        return [fn(a, b, *args) for a, b in ranges]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, a, b, *args) for a, b in ranges]
        return [f.result() for f in futures]
