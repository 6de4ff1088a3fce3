"""Seeded Gaussian source.

Streams come from the Philox-4x64-10 counter-based generator keyed through
numpy's ``SeedSequence``. Child streams are derived by appending integers to
the spawn key, so ``RandomSource(s).child(i)`` is stable across runs and
independent of how many draws the parent has made.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ContractError

ALGORITHM = "philox4x64-10/seedsequence"


class RandomSource:
    def __init__(self, seed: int, spawn_key: tuple = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        self.algorithm = ALGORITHM
        seq = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, *key: int) -> "RandomSource":
        return RandomSource(self.seed, self.spawn_key + tuple(key))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low, high, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high, size=None) -> np.ndarray:
        """Integers in ``[low, high]`` inclusive."""
        return self._gen.integers(low, high, size=size, endpoint=True)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def raw_uint64(self, n: int) -> np.ndarray:
        return self._gen.integers(0, np.iinfo(np.uint64).max, size=n, dtype=np.uint64, endpoint=True)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, spawn_key={self.spawn_key})"


def sample_standard_normal(source: RandomSource, shape) -> Tensor:
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    if len(shape) == 0:
        raise ContractError("shape must be nonempty")
    return Tensor(source.normal(shape))
