"""Seeded, stream-addressable random source.

Algorithm: numpy's PCG64 bit generator seeded through
``SeedSequence(entropy=seed, spawn_key=(stream,))``.  Equal ``(seed, stream)``
pairs give identical sequences; distinct stream ids give independent
substreams (SeedSequence hashing), so record ``i`` of a dataset can be
generated from stream ``i`` in any order.  Bit-exactness holds within one
numpy version family; it is not promised across languages.
"""

from __future__ import annotations

import numpy as np

SEED_MASK = (1 << 64) - 1


class SeededRng:
    """Single-owner random source; do not share one instance across threads."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & SEED_MASK
        self.stream = int(stream) & SEED_MASK
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream={self.stream})"

    def substream(self, stream: int) -> "SeededRng":
        return SeededRng(self.seed, stream)

    def gaussian(self, n, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise ValueError("std must be non-negative")
        return mean + std * self.generator.standard_normal(n)

    def uniform(self, n, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if not lo < hi:
            raise ValueError("need lo < hi")
        return self.generator.uniform(lo, hi, n)

    def complex_gaussian(self, shape, variance: float = 1.0) -> np.ndarray:
        """Circular complex normal entries, ``variance/2`` per real component."""
        std = np.sqrt(variance / 2.0)
        re = self.gaussian(shape, 0.0, std)
        im = self.gaussian(shape, 0.0, std)
        return re + 1j * im

    def integers(self, low: int, high: int, n=None) -> np.ndarray:
        return self.generator.integers(low, high, n)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)
