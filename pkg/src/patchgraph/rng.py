"""Deterministic random streams keyed by seed plus derivation path.

`Rng.derive(*keys)` hashes the keys into a child stream, so any consumer
(weight init, mask sampling at step t, epoch shuffles) gets a stream that
depends only on (seed, keys) and never on call order. That is what makes
checkpoint resume reproduce the uninterrupted run exactly.
"""

from __future__ import annotations

import hashlib

import numpy as np


class Rng:
    def __init__(self, seed: int = 0, _ss: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._ss = _ss if _ss is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(self._ss))

    def derive(self, *keys) -> "Rng":
        """Child stream for a named purpose, independent of sibling streams."""
        words = [self.seed & 0xFFFFFFFF, (self.seed >> 32) & 0xFFFFFFFF]
        for key in keys:
            digest = hashlib.sha256(repr(key).encode()).digest()
            words.append(int.from_bytes(digest[:4], "little"))
            words.append(int.from_bytes(digest[4:8], "little"))
        return Rng(self.seed, _ss=np.random.SeedSequence(words))

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int) -> int:
        """One integer in [low, high)."""
        return int(self._gen.integers(low, high))

    def choice_without_replacement(self, n: int, count: int) -> np.ndarray:
        return self._gen.choice(n, size=count, replace=False)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
