"""Seeded random streams.

Every consumer gets its own ``numpy.random.Generator`` derived from
``(base_seed, stream_id, *extra_keys)`` through ``SeedSequence.spawn_key``.
The stream ids below are fixed so runs are reproducible across versions;
never hand one generator to two concurrent consumers.
"""

import numpy as np

INIT = 0
BATCHES = 1
TRAIN = 2
REINIT = 3
SPLIT = 4
SYNTH = 5
SUBSET = 6


def make_rng(seed: int, stream: int, *keys: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stream), *map(int, keys)))
    return np.random.Generator(np.random.PCG64(seq))
