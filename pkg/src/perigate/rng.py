"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
(seed, purpose, index) so results are reproducible across platforms and
independent of execution order.
"""

from __future__ import annotations

import numpy as np

# Purpose tags keep unrelated streams disjoint even for equal indices.
DATA = 1
INIT = 2
DROP = 3
SHUFFLE = 4

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _key(seed: int, purpose: int, index: int = 0) -> np.ndarray:
    k = np.zeros(2, dtype=np.uint64)
    k[0] = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    k[1] = (np.uint64(purpose) << np.uint64(32) | np.uint64(index & 0xFFFFFFFF)) & _MASK64
    return k


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, purpose, index)."""
    return np.random.Generator(np.random.Philox(key=_key(seed, purpose, index)))


def counter_uniform(seed: int, purpose: int, counter: tuple[int, int, int, int]) -> float:
    """Single uniform in [0, 1) addressed purely by a 4-part counter."""
    ctr = np.array([c & 0xFFFFFFFFFFFFFFFF for c in counter], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=_key(seed, purpose), counter=ctr))
    return float(gen.random())
