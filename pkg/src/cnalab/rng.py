"""Deterministic, purpose-namespaced random streams.

Every source of randomness in the package draws from a PCG64 generator
keyed by (seed, purpose[, counter]). Purposes occupy disjoint spawn keys,
so changing e.g. the shuffle seed can never perturb the initialization
draws. The counter slot gives per-epoch shuffle streams that are
reconstructible after a checkpoint resume without storing generator state.
"""

import numpy as np

_PURPOSES = {
    "init": 1,
    "shuffle": 2,
    "corruption": 3,
    "data": 4,
    "labels": 5,
    "split": 6,
    "probe": 7,
}


def seeded_rng(seed, purpose, counter=0):
    """Return a fresh Generator for (seed, purpose, counter)."""
    if purpose not in _PURPOSES:
        raise ValueError(f"unknown rng purpose {purpose!r}; known: {sorted(_PURPOSES)}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_PURPOSES[purpose], int(counter)))
    return np.random.Generator(np.random.PCG64(ss))
