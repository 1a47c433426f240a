"""Named RNG streams derived from a single run seed.

Every source of randomness draws from its own stream so that adding or
reordering draws in one subsystem cannot perturb another.
"""

import zlib

import numpy as np


def stream(seed, name):
    """Independent Generator for (seed, purpose-name)."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))
