"""Deterministic RNG stream derivation.

Every stochastic consumer derives its generator from (master seed,
structural tags) through numpy's SeedSequence, so simulation runs are
reproducible across platforms and independent of execution order.
"""

from __future__ import annotations

import numpy as np

SPAWN_STREAM = 1
SPEED_STREAM = 2


def rng_for(master_seed: int, *tags: int) -> np.random.Generator:
    """Generator for the stream identified by (master_seed, *tags)."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, tags)]))


def run_seed(master_seed: int, iteration: int, run_index: int) -> int:
    """Stable per-run seed for one simulation inside the assignment loop."""
    ss = np.random.SeedSequence([int(master_seed), int(iteration), int(run_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
