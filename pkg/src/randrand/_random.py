"""Counter-based random streams.

Every stream is keyed by a tuple of integers, e.g. ``(seed, column)``, so
independent pieces of a random object can be generated in any order and
on any thread with identical results.
"""

import numpy as np


def stream(seed, *keys):
    """Return a Philox generator keyed by ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed, *keys):
    """Derive a child 64-bit seed from ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
