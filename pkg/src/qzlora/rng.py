"""Deterministic 64-bit counter-based random number generator.

Every randomized choice in the pipeline (random-k selection, derived
generation seeds, sweep-subset sampling) flows through the generator
specified here, so any reimplementation in another language reproduces
identical draws from the same seed.

Generator: SplitMix64. State and outputs are 64-bit unsigned integers.

    state_{i+1} = (state_i + 0x9E3779B97F4A7C15) mod 2**64
    z = state_{i+1}
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2**64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2**64
    output_i = z ^ (z >> 31)

Bounded draws (`next_below`) reject outputs >= floor(2**64 / n) * n and
return the remainder mod n, which removes modulo bias. Sampling without
replacement is a partial Fisher-Yates shuffle: for i in 0..k-1, swap
position i with position i + next_below(n - i) and emit the first k
entries in shuffle order.
"""

from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB


class SplitMix64:
    """Stream of 64-bit outputs from a single seed."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MUL1) & _MASK64
        z = ((z ^ (z >> 27)) * _MUL2) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def next_unit(self) -> float:
        """Uniform float in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def sample_without_replacement(n: int, k: int, rng: SplitMix64) -> list[int]:
    """Uniform k-subset of range(n), in shuffle order (partial Fisher-Yates)."""
    if k < 0 or n < 0:
        raise ValueError("n and k must be nonnegative")
    k = min(k, n)
    pool = list(range(n))
    for i in range(k):
        j = i + rng.next_below(n - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def derive_seed(*parts: object) -> int:
    """64-bit seed derived from the SHA-256 of the '|'-joined string parts.

    Pure function of its arguments; used to give every (topic, condition,
    sample) tuple its own reproducible stream.
    """
    joined = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(joined.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
