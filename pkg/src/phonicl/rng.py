"""Portable deterministic random numbers.

Every random decision in this package (corpus splits, random shot
selection, shuffle ordering) flows through the SplitMix64 generator so
that a single 64-bit seed reproduces a run bit-for-bit on any platform
or implementation. SplitMix64 is the output-mixing generator published
by Steele, Lea & Flood; constants:

    state    += 0x9E3779B97F4A7C15          (golden gamma)
    z  = state
    z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

all arithmetic mod 2^64.

Sub-streams are derived from the master seed and a text label via
FNV-1a (64-bit) over the label's UTF-8 bytes, XORed into the seed and
passed once through the mixer; see `derive_seed`.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64(z: int) -> int:
    z = (z ^ (z >> 30)) * _MIX1 & MASK64
    z = (z ^ (z >> 27)) * _MIX2 & MASK64
    return z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def derive_seed(seed: int, label: str) -> int:
    """Deterministic sub-seed for the stream named `label`."""
    return _mix64((seed & MASK64) ^ fnv1a64(label.encode("utf-8")))


class SplitMix64:
    """SplitMix64 stream over a 64-bit seed."""

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & MASK64
        return _mix64(self._state)

    def next_below(self, bound: int) -> int:
        """Uniform integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        # reject the tail so every residue is equally likely
        limit = MASK64 - (MASK64 + 1) % bound
        while True:
            x = self.next_u64()
            if x <= limit:
                return x % bound

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), in selection order.

        Partial Fisher-Yates: position i swaps with a uniform choice
        from [i, n), so the prefix of length k is a uniform ordered
        sample.
        """
        if k > n:
            raise ValueError(f"cannot sample {k} from {n}")
        idx = list(range(n))
        for i in range(k):
            j = i + self.next_below(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]
