"""Deterministic, independently keyed random streams.

Every piece of randomness in the package draws from a counter-based Philox
generator keyed by the user seed plus an integer path (subsystem tag, ping
index, hypothesis index, ...). Streams are independent of execution order,
so serial and parallel schedules produce identical results.
"""

import numpy as np

_MASK = (1 << 64) - 1


def stream(seed, *path):
    """Generator keyed by ``seed`` and an integer path."""
    acc = 0x9E3779B97F4A7C15
    for part in path:
        acc = (acc * 6364136223846793005 + int(part) + 1442695040888963407) & _MASK
    key = np.array([int(seed) & _MASK, acc], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
