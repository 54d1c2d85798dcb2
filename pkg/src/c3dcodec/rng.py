"""Deterministic 64-bit pseudo-random generator (SplitMix64).

Every stochastic piece of the codec (noise proxy, padding draws, weight
init, synthetic data) runs off this generator so that a seed pins the
exact byte-level behaviour of the whole pipeline on every platform.

The algorithm is the SplitMix64 finalizer applied to a Weyl sequence:

    state_n = seed + n * 0x9E3779B97F4A7C15          (mod 2**64, n >= 1)
    z = state_n
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9         (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB         (mod 2**64)
    output_n = z ^ (z >> 31)

Because the state is a pure counter, blocks of outputs can be produced
vectorised; ``next_u64`` and ``next_u64_block`` emit the same stream.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# 53-bit mantissa scaling for uniforms in [0, 1)
_INV_2_53 = 2.0 ** -53


class RngState:
    """Single-owner deterministic generator; never share across threads."""

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        z = (self.seed + self.counter * _GAMMA) & _MASK
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    def next_u64_block(self, n: int) -> np.ndarray:
        """Vectorised draw of ``n`` outputs, identical to n next_u64 calls."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = np.uint64(self.seed) + idx * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniform(self) -> float:
        """One double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform_block(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1), same stream as repeated uniform()."""
        bits = self.next_u64_block(n) >> np.uint64(11)
        return bits.astype(np.float64) * _INV_2_53

    def randint(self, lo: int, hi: int) -> int:
        """Integer uniform on the inclusive range [lo, hi].

        Uses modulo reduction; the bias is < 2**-57 for the small ranges
        this codec draws (padding offsets, bit flags).
        """
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)
