"""Counter-based 64-bit words indexed by (seed, site, toppling index).

The construction is frozen; changing any constant changes every golden value.

    mix(z)       SplitMix64 finalizer (Stafford variant 13)
    site_key     mix(mix(seed ^ SEED_SALT) ^ pack(x, y))
    word(i)      mix(site_key + i * GOLDEN)

``pack(x, y)`` places the low 32 bits of x (two's complement) above the low 32
bits of y.  Coordinates must fit in a signed 32-bit integer.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX_A = 0xBF58476D1CE4E5B9
MIX_B = 0x94D049BB133111EB
SEED_SALT = 0x5851F42D4C957F2D

_GOLDEN = np.uint64(GOLDEN)
_MIX_A = np.uint64(MIX_A)
_MIX_B = np.uint64(MIX_B)
SALT = np.uint64(SEED_SALT)
_M32 = np.int64(0xFFFFFFFF)


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX_A
    z = (z ^ (z >> np.uint64(27))) * _MIX_B
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def pack_xy(x, y):
    return (np.uint64(np.int64(x) & _M32) << np.uint64(32)) | np.uint64(np.int64(y) & _M32)


@njit(cache=True, inline="always")
def site_key(seed, x, y):
    return mix64(mix64(seed ^ SALT) ^ pack_xy(x, y))


@njit(cache=True, inline="always")
def word_at(key, i):
    return mix64(key + np.uint64(i) * _GOLDEN)


@njit(cache=True)
def _words(seed, x, y, start, count):
    key = site_key(seed, x, y)
    out = np.empty(count, dtype=np.uint64)
    for n in range(count):
        out[n] = word_at(key, start + n)
    return out


def _mix_py(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX_A) & MASK64
    z = ((z ^ (z >> 27)) * MIX_B) & MASK64
    return z ^ (z >> 31)


def indexed_word(seed: int, x: int, y: int, i: int) -> int:
    """The uniform word consumed by the i-th toppling at site (x, y)."""
    packed = ((x & 0xFFFFFFFF) << 32) | (y & 0xFFFFFFFF)
    key = _mix_py(_mix_py((seed & MASK64) ^ SEED_SALT) ^ packed)
    return _mix_py((key + i * GOLDEN) & MASK64)


def word_stream(seed: int, x: int, y: int, start: int, count: int) -> np.ndarray:
    """Words for indices start, start+1, ... at a fixed site."""
    return _words(np.uint64(seed & MASK64), x, y, start, count)
