"""Seeded random number generation.

Every stochastic routine accepts either an integer seed or a ready
``numpy.random.Generator``.  Integer seeds build a counter-based Philox
stream so that spawned child streams are reproducible regardless of the
order in which tasks run.
"""

import numpy as np


def make_rng(seed):
    """Return a Generator for ``seed`` (int, SeedSequence, Generator or None)."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spawn_seeds(seed, k):
    """Derive ``k`` independent child SeedSequences from one base seed."""
    return np.random.SeedSequence(seed).spawn(k)


def task_seed(seed, index):
    """Deterministic integer seed for task ``index`` derived from ``seed``."""
    ss = np.random.SeedSequence([int(seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
