"""Dense HyperLogLog++ sketch used as a per-domain information counter.

Each item is hashed to 64 bits. The top ``p`` bits pick one of ``2**p``
registers; the register keeps the maximum rank (leading zeros of the
remaining bits, plus one) seen so far. Cardinality comes from the
harmonic mean of ``2**-register`` with linear counting for small ranges.

Only the dense representation is implemented. Registers are one byte each,
so a p=12 sketch holds exactly 4096 bytes of state.
"""

from __future__ import annotations

import math
import struct
from typing import Iterable

import numpy as np
from numba import njit

from ._hashing import MASK64, as_u8, fmix64, fnv_step, hash_span, seed_state
from .errors import ConfigurationError, IncompatibleSketchError, SnapshotError

MIN_PRECISION = 4
MAX_PRECISION = 18
SERIAL_VERSION = 1

INDEX_PAPER = 0
INDEX_FIXED = 1
INDEX_ENCODINGS = {"paper": INDEX_PAPER, "fixed": INDEX_FIXED}


def max_rank(p: int) -> int:
    return 64 - p + 1


def alpha(m: int) -> float:
    if m == 16:
        return 0.673
    if m == 32:
        return 0.697
    if m == 64:
        return 0.709
    return 0.7213 / (1.0 + 1.079 / m)


def inverse_powers(p: int) -> np.ndarray:
    return np.ldexp(1.0, -np.arange(max_rank(p) + 1)).astype(np.float64)


@njit(cache=True, inline="always")
def _clz64(x):
    n = 0
    if (x & np.uint64(0xFFFFFFFF00000000)) == 0:
        n += 32
        x <<= np.uint64(32)
    if (x & np.uint64(0xFFFF000000000000)) == 0:
        n += 16
        x <<= np.uint64(16)
    if (x & np.uint64(0xFF00000000000000)) == 0:
        n += 8
        x <<= np.uint64(8)
    if (x & np.uint64(0xF000000000000000)) == 0:
        n += 4
        x <<= np.uint64(4)
    if (x & np.uint64(0xC000000000000000)) == 0:
        n += 2
        x <<= np.uint64(2)
    if (x & np.uint64(0x8000000000000000)) == 0:
        n += 1
    return n


@njit(cache=True, inline="always")
def _slot_and_rank(h, p):
    idx = np.int64(h >> np.uint64(64 - p))
    w = h << np.uint64(p)
    if w == 0:
        rank = 65 - p
    else:
        rank = _clz64(w) + 1
    return idx, rank


@njit(cache=True, inline="always")
def update_register(regs, hist, h, p):
    """Apply one hashed item; keeps the rank histogram in step. Returns True on change."""
    idx, rank = _slot_and_rank(h, p)
    old = regs[idx]
    if rank > old:
        regs[idx] = rank
        hist[old] -= 1
        hist[rank] += 1
        return True
    return False


@njit(cache=True)
def estimate_from_hist(hist, m, alpha_m, inv_pow):
    s = 0.0
    for r in range(hist.shape[0]):
        s += hist[r] * inv_pow[r]
    raw = alpha_m * m * m / s
    if raw <= 2.5 * m and hist[0] > 0:
        return m * np.log(m / hist[0])
    return raw


@njit(cache=True)
def _add_spans(regs, hist, p, buf, offsets, seed):
    for i in range(offsets.shape[0] - 1):
        update_register(regs, hist, hash_span(buf, offsets[i], offsets[i + 1], seed), p)


@njit(cache=True)
def insert_info(regs, hist, p, buf, start, end, seed, encoding):
    """Add ``sub || index`` for every index in ``range(len(sub))``.

    ``sub`` is ``buf[start:end]``. The index is rendered in decimal
    (``encoding == 0``) or as four lowercase hex digits (``encoding == 1``).
    The prefix hash state is computed once and extended per index.
    """
    n = end - start
    changed = False
    if n <= 0:
        return changed
    st = seed_state(seed)
    for j in range(start, end):
        st = fnv_step(st, buf[j])
    for i in range(n):
        s2 = st
        if encoding == 1:
            for shift in (12, 8, 4, 0):
                d = (i >> shift) & 15
                s2 = fnv_step(s2, 48 + d if d < 10 else 87 + d)
        else:
            if i >= 100:
                s2 = fnv_step(s2, 48 + i // 100)
            if i >= 10:
                s2 = fnv_step(s2, 48 + (i // 10) % 10)
            s2 = fnv_step(s2, 48 + i % 10)
        if update_register(regs, hist, fmix64(s2), p):
            changed = True
    return changed


def _check_precision(p: int) -> None:
    if not isinstance(p, (int, np.integer)) or not MIN_PRECISION <= p <= MAX_PRECISION:
        raise ConfigurationError(
            f"precision_bits must be in [{MIN_PRECISION}, {MAX_PRECISION}], got {p!r}"
        )


def _as_bytes(item: bytes | str) -> bytes:
    return item.encode("utf-8") if isinstance(item, str) else bytes(item)


class HllSketch:
    """Dense HyperLogLog++ count-distinct sketch.

    Args:
        precision_bits: register-index bits ``p``; ``2**p`` registers.
        hash_seed: 64-bit seed for the item hash.
    """

    __slots__ = ("precision_bits", "hash_seed", "registers")

    def __init__(self, precision_bits: int = 12, hash_seed: int = 0) -> None:
        _check_precision(precision_bits)
        self.precision_bits = int(precision_bits)
        self.hash_seed = int(hash_seed) & MASK64
        self.registers = np.zeros(1 << self.precision_bits, dtype=np.uint8)

    @property
    def num_registers(self) -> int:
        return 1 << self.precision_bits

    def _scratch_hist(self) -> np.ndarray:
        return np.bincount(self.registers, minlength=max_rank(self.precision_bits) + 1).astype(
            np.int64
        )

    def add(self, item: bytes | str) -> None:
        data = _as_bytes(item)
        h = hash_span(as_u8(data), 0, len(data), np.uint64(self.hash_seed))
        update_register(self.registers, self._scratch_hist(), np.uint64(h), self.precision_bits)

    def update(self, items: Iterable[bytes | str]) -> None:
        """Add many items in one pass."""
        chunk = [_as_bytes(x) for x in items]
        if not chunk:
            return
        lengths = np.fromiter((len(c) for c in chunk), dtype=np.int64, count=len(chunk))
        offsets = np.zeros(len(chunk) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        buf = np.frombuffer(b"".join(chunk), dtype=np.uint8)
        if buf.size == 0:
            buf = np.zeros(1, dtype=np.uint8)
        _add_spans(
            self.registers, self._scratch_hist(), self.precision_bits, buf, offsets,
            np.uint64(self.hash_seed),
        )

    def update_rows(self, rows: np.ndarray) -> None:
        """Add each row of a 2-D uint8 array as one fixed-width item."""
        rows = np.ascontiguousarray(rows, dtype=np.uint8)
        if rows.ndim != 2:
            raise ValueError("rows must be a 2-D uint8 array")
        n, w = rows.shape
        if n == 0:
            return
        offsets = np.arange(n + 1, dtype=np.int64) * w
        buf = rows.reshape(-1) if w else np.zeros(1, dtype=np.uint8)
        _add_spans(
            self.registers, self._scratch_hist(), self.precision_bits, buf, offsets,
            np.uint64(self.hash_seed),
        )

    def count(self) -> float:
        m = self.num_registers
        return float(
            estimate_from_hist(
                self._scratch_hist(), m, alpha(m), inverse_powers(self.precision_bits)
            )
        )

    def merge(self, other: HllSketch) -> HllSketch:
        """Register-wise maximum of two compatible sketches."""
        self._check_compatible(other)
        out = HllSketch(self.precision_bits, self.hash_seed)
        np.maximum(self.registers, other.registers, out=out.registers)
        return out

    def copy(self) -> HllSketch:
        out = HllSketch(self.precision_bits, self.hash_seed)
        out.registers[:] = self.registers
        return out

    def _check_compatible(self, other: HllSketch) -> None:
        if other.precision_bits != self.precision_bits or other.hash_seed != self.hash_seed:
            raise IncompatibleSketchError(
                f"cannot combine p={self.precision_bits}/seed={self.hash_seed:#x} "
                f"with p={other.precision_bits}/seed={other.hash_seed:#x}"
            )

    def to_bytes(self) -> bytes:
        header = struct.pack("<BBQ", SERIAL_VERSION, self.precision_bits, self.hash_seed)
        return header + self.registers.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> HllSketch:
        if len(data) < 10:
            raise SnapshotError("sketch image too short")
        version, p, seed = struct.unpack_from("<BBQ", data)
        if version != SERIAL_VERSION:
            raise SnapshotError(f"unsupported sketch version {version}")
        _check_precision(p)
        if len(data) != 10 + (1 << p):
            raise SnapshotError(f"expected {1 << p} registers, got {len(data) - 10}")
        regs = np.frombuffer(data, dtype=np.uint8, offset=10)
        if int(regs.max(initial=0)) > max_rank(p):
            raise SnapshotError("register value out of range")
        out = cls(p, seed)
        out.registers[:] = regs
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HllSketch):
            return NotImplemented
        return (
            self.precision_bits == other.precision_bits
            and self.hash_seed == other.hash_seed
            and np.array_equal(self.registers, other.registers)
        )

    def __repr__(self) -> str:
        return f"HllSketch(p={self.precision_bits}, estimate={self.count():.1f})"


def hll_new(precision_bits: int = 12, hash_seed: int = 0) -> HllSketch:
    return HllSketch(precision_bits, hash_seed)


def hll_add(sketch: HllSketch, item: bytes | str) -> HllSketch:
    sketch.add(item)
    return sketch


def hll_count(sketch: HllSketch) -> float:
    return sketch.count()


def hll_merge(a: HllSketch, b: HllSketch) -> HllSketch:
    return a.merge(b)


def info_insert(sketch: HllSketch, subdomain: str, index_encoding: str = "paper") -> HllSketch:
    """Add the information items of ``subdomain`` to ``sketch``.

    For a subdomain of length N this adds ``subdomain + str(i)`` for
    i in 0..N-1 (or a fixed-width hex index with ``index_encoding="fixed"``),
    so the distinct count approximates total distinct subdomain length.
    """
    try:
        enc = INDEX_ENCODINGS[index_encoding]
    except KeyError:
        raise ConfigurationError(f"unknown index encoding {index_encoding!r}") from None
    data = subdomain.encode("utf-8")
    if data:
        insert_info(
            sketch.registers, sketch._scratch_hist(), sketch.precision_bits, as_u8(data),
            0, len(data), np.uint64(sketch.hash_seed), enc,
        )
    return sketch


def info_items(subdomain: str, index_encoding: str = "paper") -> list[str]:
    """The strings ``info_insert`` adds, for inspection and testing."""
    if index_encoding == "fixed":
        return [f"{subdomain}{i:04x}" for i in range(len(subdomain))]
    return [f"{subdomain}{i}" for i in range(len(subdomain))]


def linear_counting(m: int, zeros: int) -> float:
    return m * math.log(m / zeros)
