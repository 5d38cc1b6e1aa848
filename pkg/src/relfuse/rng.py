"""Seeded random number generation with derivable child streams."""

import hashlib

import numpy as np


def _key_to_int(key):
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Deterministic random source: one seed, one sequence, on every platform.

    ``child(*keys)`` derives an independent stream from the root seed and the
    key path alone, never from draw order, so unrelated consumers (parameter
    init, per-epoch shuffles, per-encoder dropout masks) cannot perturb each
    other's draws.
    """

    def __init__(self, seed, _path=()):
        self.seed = int(seed)
        self._path = tuple(_path)
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF]
        entropy += [_key_to_int(k) for k in self._path]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, *keys):
        return Rng(self.seed, self._path + tuple(keys))

    def uniform(self, low=0.0, high=1.0, size=None, dtype=np.float64):
        return np.asarray(self._gen.uniform(low, high, size=size)).astype(dtype, copy=False)

    def normal(self, loc=0.0, scale=1.0, size=None, dtype=np.float64):
        return np.asarray(self._gen.normal(loc, scale, size=size)).astype(dtype, copy=False)

    def permutation(self, n):
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self._path!r})"
