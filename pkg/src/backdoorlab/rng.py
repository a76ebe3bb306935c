"""Deterministic random-stream derivation.

Every stochastic routine in the package draws from a generator derived
from an integer seed plus an optional key path, so independent
components (restarts, examples, trial rows) get decoupled streams that
do not depend on evaluation order.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def generator(seed: int, *key: int) -> np.random.Generator:
    """Return a PCG64 generator for (seed, *key), stable across runs."""
    entropy = [int(seed) & _MASK64] + [int(k) & _MASK64 for k in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
