"""Deterministic 64-bit random number generation.

Every random choice in the toolkit (weight init, instance shuffling, batch
order, baseline scores) flows through this splitmix64 generator so that runs
are replayable bit-for-bit, and so that other implementations can reproduce
identical streams from the documented constants:

    state  <- (state + 0x9E3779B97F4A7C15) mod 2^64
    output <- mix64(state)

where mix64 is the finalizer

    z <- (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9   (mod 2^64)
    z <- (z XOR (z >> 27)) * 0x94D049BB133111EB   (mod 2^64)
    z <- z XOR (z >> 31)

Derived conventions, all of which callers rely on:
  * floats in [0, 1) are (output >> 11) * 2^-53
  * bounded draws are output mod n (bias is negligible for the small n used)
  * permutations are Fisher-Yates from the top: for i = n-1 .. 1 swap
    position i with position (next_u64() mod (i+1))
  * stream derivation folds salts into a seed one additive step at a time:
    s <- mix64((s + 0x9E3779B97F4A7C15 + salt) mod 2^64)
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive(seed: int, *salts: int) -> int:
    """Fold integer salts into a seed, yielding an independent stream seed.

    derive(s, a, b) != derive(s, b, a) in general; callers use fixed salt
    orders (epoch index, trial index, instance position) documented at the
    call sites.
    """
    s = seed & _MASK
    for salt in salts:
        s = mix64((s + _GAMMA + (salt & _MASK)) & _MASK)
    return s


class SplitMix64:
    """Sequential splitmix64 stream with vectorized block draws."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return mix64(self._state)

    def next_float(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        return self.next_u64() % n

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates permutation of range(n)."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.next_below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def next_u64_block(self, n: int) -> np.ndarray:
        """The next n outputs as uint64, identical to n next_u64() calls.

        The state advance is affine, so the block is computed with wrapping
        numpy uint64 arithmetic instead of a Python loop.
        """
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
        with np.errstate(over="ignore"):
            z = np.uint64(self._state) + steps
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
            z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * _GAMMA) & _MASK
        return z

    def next_float_block(self, n: int) -> np.ndarray:
        """The next n uniform doubles in [0, 1) as a float64 array."""
        return (self.next_u64_block(n) >> np.uint64(11)) * 2.0**-53
