"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, stream)``.  Replica ``i`` of an experiment uses stream ``i``, so
results do not depend on how replicas are scheduled across workers.
"""
import numpy as np

MAX_SEED = 2**64 - 1


def stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for a nested stream path, e.g. ``(replica, phase)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
