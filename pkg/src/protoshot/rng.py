"""Seeded pseudo-random generator used for every stochastic choice in the package.

Support-set selection, train-time shuffling, dropout masks, and weight
initialization all draw from this generator so that runs reproduce exactly
from a 64-bit seed, independent of numpy's global state and portable across
implementations in other languages.

Algorithm: xorshift64* with the state seeded through one round of
splitmix64. All arithmetic is modulo 2**64.

    splitmix64(seed):
        z = (seed + 0x9E3779B97F4A7C15)
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

    next():
        x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27
        return x * 0x2545F4914F6CDD1D

A zero state (possible only if splitmix64 yields 0) is replaced by the
splitmix64 constant so the xorshift state never sticks at zero.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(seed: int) -> int:
    z = (seed + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class Rng:
    """xorshift64* stream; deterministic for a given seed."""

    def __init__(self, seed: int):
        self._state = splitmix64(int(seed) & _MASK64) or _GOLDEN

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def below(self, n: int) -> int:
        """Integer in [0, n). Plain modulo; the bias at n << 2**64 is irrelevant here."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        return self.next_u64() % n

    def sample_without_replacement(self, population: int, k: int) -> np.ndarray:
        """k distinct indices from range(population), via partial Fisher-Yates.

        The draw order is part of the contract: selections reproduce exactly
        across runs and implementations.
        """
        if k > population:
            raise ValueError(f"cannot sample {k} from population {population}")
        pool = np.arange(population, dtype=np.int64)
        for i in range(k):
            j = i + self.below(population - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k].copy()

    def shuffle(self, arr: np.ndarray) -> None:
        """In-place Fisher-Yates shuffle along the first axis."""
        n = len(arr)
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            arr[i], arr[j] = arr[j].copy(), arr[i].copy()

    def uniform_array(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Array of uniforms in [low, high), filled in row-major order.

        Bulk draws consume exactly one value from the sequential stream, used
        as the seed of a counter-mode splitmix64 block (vectorizable, so
        dropout masks and weight init stay cheap). Equally deterministic, but
        a different sequence than calling uniform() elementwise.
        """
        n = int(np.prod(shape))
        block = _splitmix64_block(self.next_u64(), n)
        out = (block >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * out).reshape(shape)


def _splitmix64_block(seed: int, n: int) -> np.ndarray:
    """Vectorized splitmix64 over the counter sequence seed+1 .. seed+n."""
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + (np.arange(1, n + 1, dtype=np.uint64)) * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))
