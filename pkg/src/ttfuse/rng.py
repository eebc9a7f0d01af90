"""SplitMix64: a tiny counter-style PRNG with a published recurrence.

Pinned so that weight initialization and phantom images come out identical on
every platform and in every implementation that follows the same recurrence.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self, n: int) -> np.ndarray:
        """The next ``n`` raw 64-bit outputs as a uint64 array."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * np.uint64(GAMMA)
        self.state = (self.state + n * GAMMA) & MASK64
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Doubles in [low, high) built from the top 53 bits."""
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return low + (high - low) * u

    def normal(self, n: int) -> np.ndarray:
        """Standard normals by the Box-Muller transform, two per uniform pair."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n]

    def integers(self, n: int, high: int) -> np.ndarray:
        """Integers in [0, high) by scaling a uniform double."""
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        u = self.uniform(max(n - 1, 0))
        for t, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[t] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
