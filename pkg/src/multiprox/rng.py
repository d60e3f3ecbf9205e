"""Random stream construction.

All randomness in the package flows through counter-based Philox generators
built from ``numpy.random.SeedSequence``. Seed sequences are splittable, so
independent substreams (per replicate, per federated client) are derived by
spawning rather than by seed arithmetic on raw integers. Two runs built from
the same seed produce bit-identical streams.
"""

from __future__ import annotations

import numpy as np

SeedLike = int | np.random.SeedSequence


def seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def generator(seed: SeedLike) -> np.random.Generator:
    """A fresh Philox generator for the given seed or seed sequence."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed)))


def spawn(seed: SeedLike, count: int) -> list[np.random.Generator]:
    """``count`` independent generators spawned from one root seed."""
    children = seed_sequence(seed).spawn(count)
    return [np.random.Generator(np.random.Philox(c)) for c in children]
