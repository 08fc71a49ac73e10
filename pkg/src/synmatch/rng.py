"""Deterministic random streams backed by the Philox counter generator."""

from __future__ import annotations

import hashlib

import numpy as np


class Rng:
    """Seeded random source; the same seed yields the same stream on any platform.

    Thin wrapper over numpy's Philox generator (a documented 4x64-bit
    counter-based algorithm, stable across platforms and releases when keyed
    directly). Named child streams keep independent consumers (parameter
    init, dropout, shuffling, corpus generation) from perturbing each other.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def child(self, tag: str) -> "Rng":
        """Derive an independent stream named by ``tag`` (stable across runs)."""
        digest = hashlib.blake2b(
            f"{self.seed}/{tag}".encode(), digest_size=8
        ).digest()
        return Rng(int.from_bytes(digest, "little"))

    def uniform(self, low=0.0, high=1.0, size=None, dtype=np.float64):
        out = self._gen.uniform(low, high, size)
        if size is None:
            return float(out)
        return out.astype(dtype, copy=False)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n, size=None, replace=True):
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"Rng(seed={self.seed})"
