"""Seeded random streams.

Every trial owns a family of independent generators derived from
``(seed, trial, stream)`` through :class:`numpy.random.SeedSequence`, so
results do not depend on how trials are scheduled across workers.
Growth, percolation marks and clocks live on separate streams; this keeps
the tree on ``n`` vertices a prefix of the tree on ``n' > n`` vertices
grown from the same trial.
"""

from __future__ import annotations

import numpy as np

TREE = 0
MARKS = 1
CLOCK = 2
BRANCHING = 3
AUX = 4

_MASK64 = (1 << 64) - 1


def stream(seed: int, trial: int = 0, kind: int = AUX) -> np.random.Generator:
    """Return the generator for ``kind`` in trial ``trial`` of run ``seed``."""
    if seed < 0 or trial < 0:
        raise ValueError("seed and trial must be nonnegative")
    ss = np.random.SeedSequence(seed & _MASK64, spawn_key=(trial, kind))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return stream(int(rng))
    raise TypeError(f"expected a numpy Generator or an int seed, got {type(rng).__name__}")
