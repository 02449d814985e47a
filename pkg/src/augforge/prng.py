"""SplitMix64 pseudo-random generator.

All randomness in the package flows through this generator so that outputs are
reproducible bit-for-bit on any platform and can be re-implemented in other
languages from this file alone:

* state advance: ``state = (state + 0x9E3779B97F4A7C15) mod 2**64``
* output: ``z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EB; z ^ (z >> 31)`` (all mod 2**64)
* ``random()`` is ``(next_u64() >> 11) * 2**-53``, uniform on [0, 1)
* ``randbelow(n)`` uses rejection sampling on the top of the 64-bit range
"""
from __future__ import annotations

import hashlib
from typing import MutableSequence, TypeVar

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

T = TypeVar("T")


def mix64(z: int) -> int:
    """SplitMix64 output finalizer applied to a single 64-bit word."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def child_seed(seed: int, index: int) -> int:
    """Seed of the ``index``-th child of a composite: ``mix64(seed ^ index)``."""
    return mix64((seed ^ index) & MASK64)


def derive_seed(seed: int, key: str) -> int:
    """Seed for a named sub-stream: first 8 bytes (little-endian) of
    ``sha256(f"{seed}:{key}")``."""
    digest = hashlib.sha256(f"{seed & MASK64}:{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: MutableSequence[T]) -> None:
        """In-place Fisher-Yates, walking from the last index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def bernoulli(self, p: float) -> bool:
        return self.random() < p
