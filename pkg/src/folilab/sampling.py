"""Deterministic seeding and worker fan-out.

Every Monte Carlo sample draws from its own generator derived from
``(seed, index)``, so results do not depend on how samples are split across
workers.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def rng_for(seed: int, *index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, index)]))


def worker_count() -> int:
    env = os.environ.get("FOLILAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """``list(map(fn, items))`` spread over ``worker_count()`` threads; order preserved."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
