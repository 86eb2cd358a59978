"""Counter-based random streams.

Each :class:`Rng` owns a Philox-4x64 bit generator keyed by ``(seed, *key)``
through :class:`numpy.random.SeedSequence`.  Philox output depends only on key
and counter, so a given seed and call sequence reproduces on any platform.

Normal variates use the Box-Muller transform on the stream's 53-bit uniform
doubles, ``u1`` taken in (0, 1]::

    r = sqrt(-2 log u1);  z = [r cos(2 pi u2), r sin(2 pi u2)]

with the cosine half of a block emitted before the sine half.
"""

from __future__ import annotations

import numpy as np


class Rng:
    def __init__(self, seed: int, *key: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence((self.seed, *self.key))))
        self.draws = 0  # number of uniform doubles consumed

    def spawn(self, *key: int) -> "Rng":
        """Independent sub-stream; depends only on (seed, key path)."""
        return Rng(self.seed, *self.key, *key)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0, dtype=np.float64) -> np.ndarray:
        n = int(np.prod(shape))
        u = self._gen.random(n)
        self.draws += n
        return (low + (high - low) * u).reshape(shape).astype(dtype)

    def normal(self, shape=(), dtype=np.float64) -> np.ndarray:
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)
        u2 = self._gen.random(m)
        self.draws += 2 * m
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])[:n]
        return z.reshape(shape).astype(dtype)

    def truncated_normal(self, shape=(), std: float = 1.0, bound: float = 2.0, dtype=np.float64) -> np.ndarray:
        """Normal draws with |z| > bound redrawn; scaled by ``std``."""
        z = self.normal(shape)
        bad = np.abs(z) > bound
        while bad.any():
            z[bad] = self.normal(int(bad.sum()))
            bad = np.abs(z) > bound
        return (std * z).astype(dtype)

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` distinct indices from ``range(n)`` (without replacement)."""
        if size > n:
            raise ValueError(f"cannot draw {size} distinct items from {n}")
        keys = self._gen.random(n)
        self.draws += n
        return np.argsort(keys, kind="stable")[:size]

    def integers(self, low: int, high: int, size=()) -> np.ndarray:
        u = self.uniform(size)
        return (low + np.floor(u * (high - low))).astype(np.int64)
