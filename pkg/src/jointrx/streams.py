"""Counter-based random streams keyed by (master seed, component, index...)."""

from __future__ import annotations

import numpy as np

# component tags; any stable integers work, these just keep streams disjoint
SCENARIO = 1
CHANNEL = 2
NOISE = 3
PAYLOAD = 4
INIT = 5
TRAIN = 6
VALID = 7
COVARIANCE = 8


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent Philox generator for the given key path."""
    ss = np.random.SeedSequence(entropy=[int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, keys)])
    return np.random.Generator(np.random.Philox(ss))
