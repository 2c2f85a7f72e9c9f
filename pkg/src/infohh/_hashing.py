"""Seeded 64-bit byte hashing shared by the sketch and the engine kernel.

FNV-1a over the bytes, started from a seed-dependent offset basis and
finished with the MurmurHash3 64-bit finalizer. The byte-at-a-time state
lets callers hash a common prefix once and extend it with short suffixes,
which is what the information-insert loop does for ``subdomain || i``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)
_M1 = np.uint64(0xFF51AFD7ED558CCD)
_M2 = np.uint64(0xC4CEB9FE1A85EC53)
_S33 = np.uint64(33)
_S11 = np.uint64(11)
_SEED_SALT = np.uint64(0x9E3779B97F4A7C15)
_UNIT = 1.0 / 9007199254740992.0  # 2**-53

MASK64 = (1 << 64) - 1


@njit(cache=True, inline="always")
def fmix64(k):
    k ^= k >> _S33
    k *= _M1
    k ^= k >> _S33
    k *= _M2
    k ^= k >> _S33
    return k


@njit(cache=True, inline="always")
def seed_state(seed):
    return FNV_OFFSET ^ fmix64(seed ^ _SEED_SALT)


@njit(cache=True, inline="always")
def fnv_step(state, byte):
    return (state ^ np.uint64(byte)) * FNV_PRIME


@njit(cache=True)
def hash_span(buf, start, end, seed):
    st = seed_state(seed)
    for j in range(start, end):
        st = fnv_step(st, buf[j])
    return fmix64(st)


@njit(cache=True, inline="always")
def to_unit(h):
    """Top 53 bits of a 64-bit hash as a float in [0, 1)."""
    return np.float64(h >> _S11) * _UNIT


def as_u8(data: bytes | bytearray | memoryview) -> np.ndarray:
    return np.frombuffer(data, dtype=np.uint8)


def hash_bytes(data: bytes, seed: int) -> int:
    """64-bit hash of ``data`` under ``seed``."""
    return int(hash_span(as_u8(data), 0, len(data), np.uint64(seed & MASK64)))


def derive_seed(seed: int, stream: int) -> int:
    """Independent 64-bit seed for a named sub-stream of ``seed``."""
    return int(fmix64(np.uint64((seed + stream * 0x9E3779B97F4A7C15) & MASK64)))
