"""Numba batch kernel for the sampled information-counter cache.

State lives in numpy arrays bundled in ``KernelState``. Slots ``0..k`` hold
cache entries (one spare slot so an admission can briefly overflow before
eviction). A linear-probing table maps domain key hashes to slots.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numba import njit

from ._hashing import fmix64, fnv_step, seed_state, to_unit
from .sketch import estimate_from_hist, insert_info, max_rank

MAX_DOMAIN = 256

# per-event status codes
ST_OK = 0
ST_PARSE_ERROR = 1
ST_ALLOWLISTED = 2
ST_SKIPPED = 3

# scalar float slots
F_TAU = 0
F_WINDOW_START = 1
# scalar int slots
I_COUNT = 0
I_STARTED = 1
I_NEXT_ALERT = 2
I_FREE_TOP = 3
I_ADMITTED = 4
I_EVICTED = 5
I_RESETS = 6


class KernelState(NamedTuple):
    regs: np.ndarray  # uint8 [k+1, m]
    hist: np.ndarray  # int32 [k+1, R+1]
    est: np.ndarray  # float64 [k+1]
    seeds: np.ndarray  # float64 [k+1]
    keys: np.ndarray  # uint64 [k+1]
    dom: np.ndarray  # uint8 [k+1, MAX_DOMAIN]
    dlen: np.ndarray  # int32 [k+1]
    alert_ids: np.ndarray  # int64 [k+1]
    repeats: np.ndarray  # int64 [k+1]
    occupied: np.ndarray  # bool [k+1]
    free: np.ndarray  # int32 [k+1]
    table: np.ndarray  # int32 [cap]
    fs: np.ndarray  # float64 scalars
    ints: np.ndarray  # int64 scalars


class Params(NamedTuple):
    k: int
    p: int
    m: int
    alpha_m: float
    inv_pow: np.ndarray
    hll_seed: np.uint64
    pair_seed: np.uint64
    encoding: int
    depth: int
    threshold_bytes: float
    window_seconds: float
    window_origin: float
    has_origin: bool


class Allow(NamedTuple):
    keys: np.ndarray  # uint64 sorted
    buf: np.ndarray  # uint8
    off: np.ndarray  # int64 [n+1]


class Outputs(NamedTuple):
    status: np.ndarray  # int8 [n]
    fire_idx: np.ndarray  # int64 [n]
    fire_aid: np.ndarray
    fire_est: np.ndarray
    fire_win: np.ndarray
    rep_aid: np.ndarray  # int64 [n + k + 1]
    rep_cnt: np.ndarray
    counts: np.ndarray  # int64 [2]: fires, repeat records
    trace_est: np.ndarray  # float64 [n] or [0]
    trace_key: np.ndarray  # uint64 [n] or [0]
    trace_win: np.ndarray  # float64 [n] or [0]


def new_state(k: int, p: int) -> KernelState:
    cap = 1
    while cap < 4 * (k + 1):
        cap <<= 1
    m = 1 << p
    st = KernelState(
        regs=np.zeros((k + 1, m), dtype=np.uint8),
        hist=np.zeros((k + 1, max_rank(p) + 1), dtype=np.int32),
        est=np.zeros(k + 1, dtype=np.float64),
        seeds=np.zeros(k + 1, dtype=np.float64),
        keys=np.zeros(k + 1, dtype=np.uint64),
        dom=np.zeros((k + 1, MAX_DOMAIN), dtype=np.uint8),
        dlen=np.zeros(k + 1, dtype=np.int32),
        alert_ids=np.full(k + 1, -1, dtype=np.int64),
        repeats=np.zeros(k + 1, dtype=np.int64),
        occupied=np.zeros(k + 1, dtype=np.bool_),
        free=np.zeros(k + 1, dtype=np.int32),
        table=np.full(cap, -1, dtype=np.int32),
        fs=np.zeros(2, dtype=np.float64),
        ints=np.zeros(8, dtype=np.int64),
    )
    clear(st)
    return st


def new_outputs(n: int, k: int, trace: bool) -> Outputs:
    t = n if trace else 0
    return Outputs(
        status=np.zeros(n, dtype=np.int8),
        fire_idx=np.zeros(n, dtype=np.int64),
        fire_aid=np.zeros(n, dtype=np.int64),
        fire_est=np.zeros(n, dtype=np.float64),
        fire_win=np.zeros(n, dtype=np.float64),
        rep_aid=np.zeros(n + k + 1, dtype=np.int64),
        rep_cnt=np.zeros(n + k + 1, dtype=np.int64),
        counts=np.zeros(2, dtype=np.int64),
        trace_est=np.full(t, np.nan, dtype=np.float64),
        trace_key=np.zeros(t, dtype=np.uint64),
        trace_win=np.full(t, np.nan, dtype=np.float64),
    )


@njit(cache=True)
def clear(st):
    """Empty the cache and restore tau to 1 (window start is left alone)."""
    k1 = st.occupied.shape[0]
    st.table[:] = -1
    for s in range(k1):
        st.occupied[s] = False
        st.alert_ids[s] = -1
        st.repeats[s] = 0
        st.free[s] = k1 - 1 - s
    st.ints[I_FREE_TOP] = k1
    st.ints[I_COUNT] = 0
    st.fs[F_TAU] = 1.0


@njit(cache=True, inline="always")
def _lower(b):
    if 65 <= b <= 90:
        return b + 32
    return b


@njit(cache=True)
def _domain_equal(st, slot, buf, start, end):
    n = end - start
    if st.dlen[slot] != n:
        return False
    for j in range(n):
        if st.dom[slot, j] != _lower(buf[start + j]):
            return False
    return True


@njit(cache=True)
def table_find(st, key, buf, start, end):
    mask = st.table.shape[0] - 1
    pos = np.int64(key & np.uint64(mask))
    while True:
        s = st.table[pos]
        if s < 0:
            return -1
        if st.keys[s] == key and _domain_equal(st, s, buf, start, end):
            return s
        pos = (pos + 1) & mask


@njit(cache=True)
def _table_insert(st, slot):
    mask = st.table.shape[0] - 1
    pos = np.int64(st.keys[slot] & np.uint64(mask))
    while st.table[pos] >= 0:
        pos = (pos + 1) & mask
    st.table[pos] = slot


@njit(cache=True)
def _table_delete(st, slot):
    mask = st.table.shape[0] - 1
    i = np.int64(st.keys[slot] & np.uint64(mask))
    while st.table[i] != slot:
        i = (i + 1) & mask
    j = i
    while True:
        j = (j + 1) & mask
        s = st.table[j]
        if s < 0:
            break
        home = np.int64(st.keys[s] & np.uint64(mask))
        if i <= j:
            stays = i < home <= j
        else:
            stays = home > i or home <= j
        if stays:
            continue
        st.table[i] = s
        i = j
    st.table[i] = -1


@njit(cache=True)
def _dom_greater(st, a, b):
    """Bytewise comparison of two stored domains: True if domain(a) > domain(b)."""
    la = st.dlen[a]
    lb = st.dlen[b]
    n = min(la, lb)
    for j in range(n):
        if st.dom[a, j] != st.dom[b, j]:
            return st.dom[a, j] > st.dom[b, j]
    return la > lb


@njit(cache=True)
def _flush_slot(st, slot, out):
    if st.repeats[slot] > 0:
        r = out.counts[1]
        out.rep_aid[r] = st.alert_ids[slot]
        out.rep_cnt[r] = st.repeats[slot]
        out.counts[1] = r + 1
        st.repeats[slot] = 0


@njit(cache=True)
def flush_repeats(st, out):
    for s in range(st.occupied.shape[0]):
        if st.occupied[s]:
            _flush_slot(st, s, out)


@njit(cache=True)
def _evict(st, out):
    worst = -1
    for s in range(st.occupied.shape[0]):
        if not st.occupied[s]:
            continue
        if worst < 0 or st.seeds[s] > st.seeds[worst] or (
            st.seeds[s] == st.seeds[worst] and _dom_greater(st, s, worst)
        ):
            worst = s
    _flush_slot(st, worst, out)
    _table_delete(st, worst)
    st.occupied[worst] = False
    st.alert_ids[worst] = -1
    st.free[st.ints[I_FREE_TOP]] = worst
    st.ints[I_FREE_TOP] += 1
    st.ints[I_COUNT] -= 1
    st.ints[I_EVICTED] += 1
    st.fs[F_TAU] = st.seeds[worst]


@njit(cache=True)
def _admit(st, prm, key, u, buf, start, end):
    top = st.ints[I_FREE_TOP] - 1
    slot = st.free[top]
    st.ints[I_FREE_TOP] = top
    st.regs[slot, :] = 0
    st.hist[slot, :] = 0
    st.hist[slot, 0] = prm.m
    st.est[slot] = 0.0
    n = end - start
    for j in range(n):
        st.dom[slot, j] = _lower(buf[start + j])
    st.dlen[slot] = n
    st.keys[slot] = key
    st.seeds[slot] = u
    st.alert_ids[slot] = -1
    st.repeats[slot] = 0
    st.occupied[slot] = True
    _table_insert(st, slot)
    st.ints[I_COUNT] += 1
    st.ints[I_ADMITTED] += 1
    return slot


@njit(cache=True)
def _allowed(allow, key, buf, start, end):
    keys = allow.keys
    if keys.shape[0] == 0:
        return False
    i = np.searchsorted(keys, key)
    while i < keys.shape[0] and keys[i] == key:
        a0 = allow.off[i]
        a1 = allow.off[i + 1]
        if a1 - a0 == end - start:
            same = True
            for j in range(end - start):
                if allow.buf[a0 + j] != _lower(buf[start + j]):
                    same = False
                    break
            if same:
                return True
        i += 1
    return False


@njit(cache=True)
def _locate(buf, s, e, split, depth):
    """Validate one qname and find its domain start.

    Returns (end, domain_start) with the root dot stripped, or (-1, -1) when
    the name is malformed.
    """
    if split < -1:
        return -1, -1
    if e > s and buf[e - 1] == 46:
        e -= 1
    if e <= s or e - s > 255:
        return -1, -1
    lab = 0
    for j in range(s, e):
        b = buf[j]
        if b == 46:
            if lab == 0:
                return -1, -1
            lab = 0
        elif b < 33 or b > 126:
            return -1, -1
        else:
            lab += 1
            if lab > 63:
                return -1, -1
    if lab == 0:
        return -1, -1
    if split >= 0:
        return e, s + split
    seen = 0
    for j in range(e - 1, s - 1, -1):
        if buf[j] == 46:
            seen += 1
            if seen == depth:
                return e, j + 1
    return e, s


@njit(cache=True)
def domain_keys(buf, starts, ends, splits, depth, pair_seed):
    """Per-event domain key hash (0 for malformed names); used for sharding."""
    n = starts.shape[0]
    out = np.zeros(n, dtype=np.uint64)
    for i in range(n):
        e, d0 = _locate(buf, starts[i], ends[i], splits[i], depth)
        if e < 0:
            continue
        st = seed_state(pair_seed)
        for j in range(d0, e):
            st = fnv_step(st, _lower(buf[j]))
        out[i] = fmix64(st)
    return out


@njit(cache=True)
def pair_unit(buf, d0, d1, s0, s1, pair_seed):
    """(domain key, pair hash in [0,1)) for domain buf[d0:d1], subdomain buf[s0:s1]."""
    st = seed_state(pair_seed)
    for j in range(d0, d1):
        st = fnv_step(st, _lower(buf[j]))
    key = fmix64(st)
    st = fnv_step(st, 0)
    for j in range(s0, s1):
        st = fnv_step(st, buf[j])
    return key, to_unit(fmix64(st))


@njit(cache=True)
def _roll_window(st, prm, out, t):
    fs = st.fs
    if st.ints[I_STARTED] == 0:
        if prm.has_origin:
            w = prm.window_seconds
            fs[F_WINDOW_START] = prm.window_origin + np.floor((t - prm.window_origin) / w) * w
        else:
            fs[F_WINDOW_START] = t
        st.ints[I_STARTED] = 1
    elif t - fs[F_WINDOW_START] >= prm.window_seconds:
        w = prm.window_seconds
        flush_repeats(st, out)
        fs[F_WINDOW_START] += np.floor((t - fs[F_WINDOW_START]) / w) * w
        clear(st)
        st.ints[I_RESETS] += 1


@njit(cache=True, nogil=True)
def process_batch(st, prm, allow, buf, starts, ends, splits, times, out, trace):
    n = starts.shape[0]
    for i in range(n):
        e, d0 = _locate(buf, starts[i], ends[i], splits[i], prm.depth)
        if e < 0:
            out.status[i] = ST_PARSE_ERROR
            continue
        s0 = starts[i]
        s1 = d0 - 1 if d0 > s0 else s0
        _roll_window(st, prm, out, times[i])
        key, u = pair_unit(buf, d0, e, s0, s1, prm.pair_seed)
        if _allowed(allow, key, buf, d0, e):
            out.status[i] = ST_ALLOWLISTED
            continue
        slot = table_find(st, key, buf, d0, e)
        if slot >= 0:
            if insert_info(
                st.regs[slot], st.hist[slot], prm.p, buf, s0, s1, prm.hll_seed, prm.encoding
            ):
                st.est[slot] = estimate_from_hist(st.hist[slot], prm.m, prm.alpha_m, prm.inv_pow)
            if u < st.seeds[slot]:
                st.seeds[slot] = u
            est = st.est[slot]
            if trace:
                out.trace_est[i] = est
                out.trace_key[i] = key
                out.trace_win[i] = st.fs[F_WINDOW_START]
            if est > prm.threshold_bytes:
                if st.alert_ids[slot] < 0:
                    aid = st.ints[I_NEXT_ALERT]
                    st.ints[I_NEXT_ALERT] = aid + 1
                    st.alert_ids[slot] = aid
                    c = out.counts[0]
                    out.fire_idx[c] = i
                    out.fire_aid[c] = aid
                    out.fire_est[c] = est
                    out.fire_win[c] = st.fs[F_WINDOW_START]
                    out.counts[0] = c + 1
                else:
                    st.repeats[slot] += 1
        elif u < st.fs[F_TAU]:
            slot = _admit(st, prm, key, u, buf, d0, e)
            if insert_info(
                st.regs[slot], st.hist[slot], prm.p, buf, s0, s1, prm.hll_seed, prm.encoding
            ):
                st.est[slot] = estimate_from_hist(st.hist[slot], prm.m, prm.alpha_m, prm.inv_pow)
            if st.ints[I_COUNT] > prm.k:
                _evict(st, out)
    return n


@njit(cache=True)
def force_reset(st, out, new_start):
    flush_repeats(st, out)
    clear(st)
    st.fs[F_WINDOW_START] = new_start
    st.ints[I_STARTED] = 1
    st.ints[I_RESETS] += 1


@njit(cache=True)
def rebuild_table(st):
    st.table[:] = -1
    top = 0
    for s in range(st.occupied.shape[0] - 1, -1, -1):
        if st.occupied[s]:
            _table_insert(st, s)
        else:
            st.free[top] = s
            top += 1
    st.ints[I_FREE_TOP] = top
