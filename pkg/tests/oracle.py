"""Pure-Python reference implementations used as test oracles.

Nothing here imports the compiled kernels: hashing, sketch registers and the
cache loop are re-derived from their definitions with plain integers.
"""

from __future__ import annotations

import math
from collections import defaultdict

M64 = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fmix64(k: int) -> int:
    k ^= k >> 33
    k = (k * 0xFF51AFD7ED558CCD) & M64
    k ^= k >> 33
    k = (k * 0xC4CEB9FE1A85EC53) & M64
    k ^= k >> 33
    return k


def fnv1a(data: bytes, state: int = FNV_OFFSET) -> int:
    for b in data:
        state = ((state ^ b) * FNV_PRIME) & M64
    return state


def seeded_hash(data: bytes, seed: int) -> int:
    start = FNV_OFFSET ^ fmix64((seed ^ 0x9E3779B97F4A7C15) & M64)
    return fmix64(fnv1a(data, start))


def derive_seed(seed: int, stream: int) -> int:
    return fmix64((seed + stream * 0x9E3779B97F4A7C15) & M64)


def unit(h: int) -> float:
    return (h >> 11) / float(1 << 53)


def pair_u(domain: str, subdomain: str, seed: int) -> float:
    return unit(seeded_hash(domain.lower().encode() + b"\x00" + subdomain.encode(), seed))


class RefHll:
    """Registers as a Python list; estimate straight from the textbook formula."""

    def __init__(self, p: int = 12, seed: int = 0) -> None:
        self.p = p
        self.m = 1 << p
        self.seed = seed
        self.regs = [0] * self.m

    def add_hash(self, h: int) -> None:
        idx = h >> (64 - self.p)
        w = (h << self.p) & M64
        rank = 64 - self.p + 1 if w == 0 else (64 - w.bit_length()) + 1
        if rank > self.regs[idx]:
            self.regs[idx] = rank

    def add(self, item: bytes) -> None:
        self.add_hash(seeded_hash(item, self.seed))

    def estimate(self) -> float:
        m = self.m
        if m == 16:
            a = 0.673
        elif m == 32:
            a = 0.697
        elif m == 64:
            a = 0.709
        else:
            a = 0.7213 / (1 + 1.079 / m)
        raw = a * m * m / sum(2.0 ** -r for r in self.regs)
        zeros = self.regs.count(0)
        if raw <= 2.5 * m and zeros:
            return m * math.log(m / zeros)
        return raw


def info_items(sub: str, encoding: str = "paper") -> list[bytes]:
    if encoding == "fixed":
        return [f"{sub}{i:04x}".encode() for i in range(len(sub))]
    return [f"{sub}{i}".encode() for i in range(len(sub))]


def exact_information(pairs) -> dict[str, int]:
    """Sum of lengths of distinct subdomains per domain."""
    seen: dict[str, set[str]] = defaultdict(set)
    for d, s in pairs:
        seen[d].add(s)
    return {d: sum(len(s) for s in subs) for d, subs in seen.items()}


class RefEngine:
    """Straight-line transcription of the sampled-cache loop.

    With ``sketches=False`` no information is counted (and nothing alerts);
    that mode exists to check cache bookkeeping on long streams quickly.
    ``check`` asserts the cheap cache invariants after every element;
    ``verify`` checks the full seed bound on demand.
    """

    def __init__(self, k: int, window: float, threshold_bytes: float, hash_seed: int = 0,
                 p: int = 12, sketches: bool = True, check: bool = False,
                 encoding: str = "paper") -> None:
        self.k = k
        self.window = window
        self.thr = threshold_bytes
        self.hll_seed = derive_seed(hash_seed, 1)
        self.pair_seed = derive_seed(hash_seed, 2)
        self.p = p
        self.sketches = sketches
        self.check = check
        self.encoding = encoding
        self.ws: float | None = None
        self.tau = 1.0
        self.seeds: dict[str, float] = {}
        self.hll: dict[str, RefHll] = {}
        self.alerts: list[tuple[str, float, float, float]] = []
        self.firings: dict[tuple[str, float], int] = defaultdict(int)
        self.evictions = 0
        self.max_size = 0
        self._u_cache: dict[tuple[str, str], float] = {}

    def u(self, d: str, s: str) -> float:
        key = (d, s)
        v = self._u_cache.get(key)
        if v is None:
            v = self._u_cache[key] = pair_u(d, s, self.pair_seed)
        return v

    def _reset(self) -> None:
        self.tau = 1.0
        self.seeds.clear()
        self.hll.clear()

    def _insert(self, d: str, s: str) -> None:
        if self.sketches:
            h = self.hll[d]
            for item in info_items(s, self.encoding):
                h.add(item)

    def process(self, d: str, s: str, t: float) -> None:
        if self.ws is None:
            self.ws = t
        elif t - self.ws >= self.window:
            self.ws += math.floor((t - self.ws) / self.window) * self.window
            self._reset()
        u = self.u(d, s)
        tau_before = self.tau
        if d in self.seeds:
            self._insert(d, s)
            self.seeds[d] = min(self.seeds[d], u)
            if self.sketches:
                est = self.hll[d].estimate()
                if est > self.thr:
                    key = (d, self.ws)
                    if key not in self.firings:
                        self.alerts.append((d, self.ws, t, est))
                    self.firings[key] += 1
        elif u < self.tau:
            self.seeds[d] = u
            self.hll[d] = RefHll(self.p, self.hll_seed)
            self._insert(d, s)
            if len(self.seeds) > self.k:
                worst = max(self.seeds, key=lambda x: (self.seeds[x], x.encode()))
                seed = self.seeds.pop(worst)
                self.hll.pop(worst, None)
                self.tau = seed
                self.evictions += 1
                if self.check:
                    assert self.tau == seed
        self.max_size = max(self.max_size, len(self.seeds))
        if self.check:
            assert len(self.seeds) <= self.k
            assert self.tau <= tau_before
            assert d not in self.seeds or self.seeds[d] <= self.tau

    def verify(self) -> None:
        assert len(self.seeds) <= self.k
        assert all(v <= self.tau for v in self.seeds.values())
