"""Counter-based seed splitting so every consumer of randomness gets its own independent stream."""

import zlib

import numpy as np

WORKLOAD = 1
TRACE = 2
CACHE_WARM = 3
INSTANCES = 4
PEERS = 5


def stream(seed: int, *key) -> np.random.Generator:
    # string keys are hashed so callers can name streams without a registry
    spawn = tuple(k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in key)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn))
