"""Deterministic 64-bit counter-based random generator.

Every random draw in this package flows through :class:`SplitMix64` so that
runs are bit-reproducible from a single integer seed, independent of platform,
process count, or library versions. The generator and every derived draw are
fixed here and must not change without a format-version bump:

* state update: ``state = (state + 0x9E3779B97F4A7C15) mod 2^64``
* output mix:   ``z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EB; z ^= z >> 31`` (all mod 2^64)
* ``next_float``: ``(next_u64() >> 11) * 2^-53`` (uniform in [0, 1))
* ``bernoulli_bit``: ``1 if next_float() < 0.5 else 0`` (one u64 per bit)
* ``uniform(lo, hi)``: ``lo + (hi - lo) * next_float()``
* ``uniform_int(lo, hi)``: ``lo + floor(next_float() * (hi - lo + 1))``,
  clamped to ``hi`` (closed range)
* ``gauss(mu, sigma)``: Box-Muller cosine branch from two consecutive draws,
  ``u1 = 1 - next_float()``, ``u2 = next_float()``,
  ``mu + sigma * sqrt(-2 ln u1) * cos(2 pi u2)``

Because the output is a pure function of ``seed + k * gamma`` for the k-th
draw, blocks of draws can also be produced vectorized (see
:func:`bernoulli_matrix`), with results identical to sequential calls.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """Sequential interface over the generator defined in the module docstring."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix(self._state)

    def next_float(self) -> float:
        return (self.next_u64() >> 11) * _INV_2_53

    def bernoulli_bit(self) -> int:
        return 1 if self.next_float() < 0.5 else 0

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def uniform_int(self, lo: int, hi: int) -> int:
        # floor(f * n) with f < 1 can still round up to n for huge n; clamp.
        return min(lo + int(self.next_float() * (hi - lo + 1)), hi)

    def gauss(self, mu: float, sigma: float) -> float:
        u1 = 1.0 - self.next_float()
        u2 = self.next_float()
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def bernoulli_matrix(seed: int, rows: int, cols: int) -> np.ndarray:
    """Row-major Bernoulli(0.5) bits, identical to sequential bernoulli_bit calls.

    Exploits the counter form: the k-th u64 is mix(seed + (k+1) * gamma).
    """
    count = rows * cols
    ks = np.arange(1, count + 1, dtype=np.uint64)
    z = (np.uint64(seed & _MASK) + ks * np.uint64(_GAMMA))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    z = z ^ (z >> np.uint64(31))
    floats = (z >> np.uint64(11)).astype(np.float64) * _INV_2_53
    return (floats < 0.5).astype(np.uint8).reshape(rows, cols)
