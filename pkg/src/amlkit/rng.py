"""Deterministic, portable pseudorandom numbers.

The generator is xoshiro256** seeded through splitmix64 (Blackman/Vigna).
All randomness in the package flows through `SeededRng` so that a single
integer seed reproduces every artifact bit-for-bit on any platform.
Per-stage streams are derived from (seed, tag) via `derive_stream`.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_TWO53 = 2.0 ** -53


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def _splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (next state, output)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class SeededRng:
    """xoshiro256** stream; the same seed yields the same sequence everywhere."""

    __slots__ = ("_s",)

    def __init__(self, seed: int):
        state = int(seed) & _MASK64
        s = []
        for _ in range(4):
            state, out = _splitmix64(state)
            s.append(out)
        if not any(s):
            s[0] = _GOLDEN
        self._s = s

    def next_uint64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        """Uniform double in [low, high) using the top 53 bits."""
        u = (self.next_uint64() >> 11) * _TWO53
        return low + (high - low) * u

    def uniforms(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        raw = np.array([(self.next_uint64() >> 11) for _ in range(n)], dtype=np.float64)
        return low + (high - low) * (raw * _TWO53)

    def normal(self) -> float:
        u1 = ((self.next_uint64() >> 11) + 1) * _TWO53  # (0, 1]: keeps log finite
        u2 = (self.next_uint64() >> 11) * _TWO53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        i = 0
        while i < n:
            u1 = ((self.next_uint64() >> 11) + 1) * _TWO53
            u2 = (self.next_uint64() >> 11) * _TWO53
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            if i + 1 < n:
                out[i + 1] = r * math.sin(2.0 * math.pi * u2)
            i += 2
        return out

    def randint(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise ValueError("randint requires n >= 1")
        return min(int(self.uniform() * n), n - 1)

    def shuffle(self, seq) -> None:
        """In-place Fisher-Yates shuffle of a list or 1-D array."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def permutation(self, n: int) -> np.ndarray:
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx


def derive_stream(seed: int, tag: str) -> SeededRng:
    """Independent stream for a named stage, reproducible from (seed, tag)."""
    digest = hashlib.sha256(f"{int(seed)}\x1f{tag}".encode("utf-8")).digest()
    return SeededRng(int.from_bytes(digest[:8], "big"))
