"""Deterministic, splittable uniform random streams.

Streams are backed by the counter-based Philox generator, so a given
(seed, stream, draw index) triple produces the same variate on every
platform and regardless of how draws are batched across calls.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """SplitMix64 finalizer; bijective 64-bit mix."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


class RandomStream:
    """A reproducible stream of uniform variates identified by (seed, stream).

    Identical (seed, stream) pairs yield identical draw sequences; distinct
    pairs are statistically independent. ``split`` derives child streams so
    per-block work can be distributed without changing the results.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream={self.stream})"

    def split(self, index: int) -> "RandomStream":
        """Child stream for the given index, independent of this one."""
        child_seed = _splitmix64(self.seed ^ _splitmix64(self.stream ^ 0xA5A5A5A5A5A5A5A5))
        return RandomStream(child_seed, index)

    def uniforms(self, shape) -> np.ndarray:
        """float64 uniforms in [0, 1)."""
        return self._gen.random(shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        """Integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def normals(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
