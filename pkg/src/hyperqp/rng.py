"""Deterministic random streams for instance generation.

The generator is SplitMix64: a 64-bit counter-based generator (the state
advances by a fixed odd constant and the output is a bijective mix of the
counter).  It is specified here exactly so that generated benchmark
instances are reproducible bit-for-bit from the seed alone, independent of
any library's RNG internals:

    state   <- (state + 0x9E3779B97F4A7C15) mod 2^64
    z       <- state
    z       <- (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2^64
    z       <- (z XOR (z >> 27)) * 0x94D049BB133111EB mod 2^64
    output  <- z XOR (z >> 31)

Uniform doubles in [0, 1) take the top 53 bits divided by 2^53.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


class SplitMix64:
    """Counter-based 64-bit generator with a tiny, stable API."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """U(0, 1) from the top 53 bits (the full double mantissa)."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform_positive(self) -> float:
        """U(0, 1) excluding exact 0.0 (coefficients must be nonzero)."""
        while True:
            u = self.uniform()
            if u != 0.0:
                return u

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        limit = _MASK64 - (_MASK64 + 1) % n
        while True:
            u = self.next_u64()
            if u <= limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, n: int, k: int) -> list[int]:
        """k distinct integers from range(n), in draw order."""
        if k > n:
            raise ValueError("sample() needs k <= n")
        chosen: set[int] = set()
        out: list[int] = []
        while len(out) < k:
            v = self.below(n)
            if v not in chosen:
                chosen.add(v)
                out.append(v)
        return out

    def derive(self, *salts: int) -> "SplitMix64":
        """Independent substream keyed by integer salts (for per-task seeds)."""
        child = SplitMix64(self._state)
        for s in salts:
            child = SplitMix64(child.next_u64() ^ (s & _MASK64))
        return child


def derive_seed(seed: int, *salts: int) -> int:
    """Stable 64-bit subseed from a parent seed and integer salts."""
    gen = SplitMix64(seed)
    out = gen.next_u64()
    for s in salts:
        gen = SplitMix64(out ^ (s & _MASK64))
        out = gen.next_u64()
    return out
