"""Portable seeded random number generation.

All stochastic components draw from :class:`Rng`, a xoshiro256** generator
seeded through SplitMix64. Every derived sampler below is written in terms of
the raw 64-bit stream so that a seed reproduces the same values in any
language that implements the same procedures:

* ``next_u64``  -- xoshiro256** output.
* ``uniform``   -- ``(next_u64 >> 11) * 2**-53``, a double in ``[0, 1)``.
* ``randbelow`` -- bitmask rejection: draw ``next_u64 >> (64 - k)`` with
  ``k = bit_length(n - 1)`` until the value is ``< n``.
* ``poisson``   -- Knuth's product of uniforms.
* ``categorical`` -- inverse CDF over cumulative sums, in index order.
* ``sample``    -- partial Fisher-Yates over a copy of the population.
* ``normal``    -- Box-Muller, cosine branch only, ``u1`` replaced by ``1 - u1``.
"""

from __future__ import annotations

import math
from typing import Sequence, TypeVar

T = TypeVar("T")

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> tuple[int, int]:
    """Advance a SplitMix64 state; return ``(new_state, output)``."""
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """xoshiro256** stream. Not thread-safe; give each worker its own."""

    __slots__ = ("_s",)

    def __init__(self, seed: int = 0):
        state = int(seed) & _MASK
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
        self._s = s

    @classmethod
    def derive(cls, seed: int, *keys: int) -> "Rng":
        """Independent stream for ``(seed, *keys)``; used for per-epoch and per-worker seeds."""
        state = int(seed) & _MASK
        for key in keys:
            state, out = splitmix64(state ^ ((int(key) * _GOLDEN) & _MASK))
            state = out
        return cls(state)

    def get_state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)  # type: ignore[return-value]

    def set_state(self, state: Sequence[int]) -> None:
        if len(state) != 4 or not any(state):
            raise ValueError("xoshiro256** state must be four words, not all zero")
        self._s = [int(v) & _MASK for v in state]

    def copy(self) -> "Rng":
        other = Rng.__new__(Rng)
        other._s = list(self._s)
        return other

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Rng) and self._s == other._s

    def __repr__(self) -> str:
        return f"Rng(state={[hex(v) for v in self._s]})"

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)
        if low == 0.0 and high == 1.0:
            return u
        return low + (high - low) * u

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"randbelow needs n >= 1, got {n}")
        if n == 1:
            return 0
        shift = 64 - (n - 1).bit_length()
        while True:
            v = self.next_u64() >> shift
            if v < n:
                return v

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def poisson(self, lam: float) -> int:
        if not lam > 0:
            raise ValueError(f"Poisson rate must be positive, got {lam}")
        limit = math.exp(-lam)
        k = 0
        p = self.uniform()
        while p > limit:
            k += 1
            p *= self.uniform()
        return k

    def categorical(self, probs: Sequence[float]) -> int:
        u = self.uniform()
        acc = 0.0
        for i, p in enumerate(probs):
            acc += p
            if u < acc:
                return i
        # rounding left the cumulative sum just under 1
        for i in range(len(probs) - 1, -1, -1):
            if probs[i] > 0:
                return i
        raise ValueError("categorical distribution has no mass")

    def sample(self, population: Sequence[T], k: int) -> list[T]:
        pool = list(population)
        n = len(pool)
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} items from {n}")
        for i in range(k):
            j = i + self.randbelow(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return mean + std * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
