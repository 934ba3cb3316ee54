"""Deterministic 64-bit PRNG for reproducible sampling.

xoshiro256** 1.0 (Blackman & Vigna), state seeded with splitmix64. Both
generators use the published constants, so any implementation in any
language produces the same stream for the same seed. Uniform doubles take
the top 53 bits of the output word.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256:
    """xoshiro256** stream with convenience draws used across the package."""

    def __init__(self, seed: int):
        state = seed & _MASK
        self._s = []
        for _ in range(4):
            state, word = _splitmix64(state)
            self._s.append(word)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform_open(self) -> float:
        """Uniform double in (0, 1); the single zero word maps to 2**-53."""
        u = self.uniform()
        return u if u > 0.0 else 2.0 ** -53

    def randint(self, n: int) -> int:
        """Integer in [0, n). Defined as floor(u * n) for cross-language reproducibility."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return min(int(self.uniform() * n), n - 1)

    def sample(self, items: list, k: int) -> list:
        """k items without replacement (partial Fisher-Yates, order preserved by draw)."""
        if k > len(items):
            raise ValueError("sample larger than population")
        pool = list(items)
        out = []
        for _ in range(k):
            j = self.randint(len(pool))
            out.append(pool.pop(j))
        return out

    def shuffle(self, items: list) -> list:
        return self.sample(items, len(items))
