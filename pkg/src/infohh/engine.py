"""Streaming information heavy-hitter engine.

A fixed-size cache maps registered domains to HyperLogLog++ information
counters. A domain not in the cache is admitted only when the hash of its
(domain, subdomain) pair falls below the sampling threshold ``tau``; when
the cache overflows, the entry with the largest minimum pair hash is
evicted and ``tau`` drops to that value. Counters are checked against
``threshold_bps * window_seconds`` after every update of a cached domain,
and the whole cache is flushed at the start of each window.

The per-element loop runs in a compiled kernel (``_kernel``); this module
keeps the Python-facing objects: configuration, alerts, batching,
checkpoints.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernel as K
from ._hashing import MASK64, as_u8, derive_seed
from .errors import ConfigurationError, SnapshotError
from .sketch import INDEX_ENCODINGS, HllSketch, alpha, inverse_powers
from .stream import (
    DEFAULT_EXTRACTION,
    DnsQueryEvent,
    ExtractionConfig,
    StreamElement,
    parse_qname,
)
from .errors import QnameError

SNAPSHOT_MAGIC = b"IHHE"
SNAPSHOT_VERSION = 1

_HLL_STREAM = 1
_PAIR_STREAM = 2


@dataclass(frozen=True)
class EngineConfig:
    """Engine parameters.

    ``threshold_bps`` is a byte rate; a domain alerts once its estimated
    distinct information in the current window exceeds
    ``threshold_bps * window_seconds`` bytes.
    """

    cache_size: int = 1000
    window_seconds: float = 120.0
    threshold_bps: float = 250.0
    precision: int = 12
    hash_seed: int = 0
    index_encoding: str = "paper"
    window_origin: float | None = None

    def __post_init__(self) -> None:
        for name in ("window_seconds", "threshold_bps"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.cache_size < 1:
            raise ConfigurationError(f"cache_size must be positive, got {self.cache_size}")
        if not (self.window_seconds > 0 and math.isfinite(self.window_seconds)):
            raise ConfigurationError(f"window_seconds must be positive, got {self.window_seconds}")
        if not (self.threshold_bps >= 0 and math.isfinite(self.threshold_bps)):
            raise ConfigurationError(f"threshold_bps must be >= 0, got {self.threshold_bps}")
        if not 4 <= self.precision <= 18:
            raise ConfigurationError(f"precision must be in [4, 18], got {self.precision}")
        if self.index_encoding not in INDEX_ENCODINGS:
            raise ConfigurationError(f"unknown index encoding {self.index_encoding!r}")

    @property
    def threshold_bytes(self) -> float:
        return self.threshold_bps * self.window_seconds

    @property
    def hll_seed(self) -> int:
        return derive_seed(self.hash_seed, _HLL_STREAM)

    @property
    def pair_seed(self) -> int:
        return derive_seed(self.hash_seed, _PAIR_STREAM)

    def replace(self, **changes) -> EngineConfig:
        return EngineConfig(**{**asdict(self), **changes})


@dataclass
class Alert:
    domain: str
    window_start: float
    event_time: float
    estimated_bytes: float
    threshold_bytes: float
    client: str | None = None
    suppressed_repeat_count: int = 0
    method: str = "ibhh"

    @property
    def firing_count(self) -> int:
        """Queries that exceeded the threshold, counting the first one."""
        return 1 + self.suppressed_repeat_count

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "window_start": float(self.window_start),
            "event_time": float(self.event_time),
            "estimated_bytes": float(self.estimated_bytes),
            "threshold_bytes": float(self.threshold_bytes),
            "client": self.client,
            "suppressed_repeat_count": self.suppressed_repeat_count,
            "method": self.method,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, row: dict) -> Alert:
        return cls(
            domain=row["domain"],
            window_start=float(row["window_start"]),
            event_time=float(row["event_time"]),
            estimated_bytes=float(row["estimated_bytes"]),
            threshold_bytes=float(row["threshold_bytes"]),
            client=row.get("client"),
            suppressed_repeat_count=int(row.get("suppressed_repeat_count", 0)),
            method=row.get("method", "ibhh"),
        )


def pair_hash(domain: str, subdomain: str, seed: int) -> float:
    """Hash of the (domain, subdomain) pair as a float in [0, 1).

    The domain is lowercased and separated from the subdomain by a NUL
    byte, which cannot occur in a valid name.
    """
    d = domain.lower().encode("utf-8")
    buf = as_u8(d + b"\x00" + subdomain.encode("utf-8"))
    _, u = K.pair_unit(buf, 0, len(d), len(d) + 1, len(buf), np.uint64(seed & MASK64))
    return float(u)


def _encode_allow(domains: Iterable[str], pair_seed: int) -> K.Allow:
    items = sorted({d.lower() for d in domains})
    rows = []
    for d in items:
        b = d.encode("utf-8")
        key, _ = K.pair_unit(as_u8(b + b"\x00"), 0, len(b), len(b), len(b), np.uint64(pair_seed))
        rows.append((int(key), b))
    rows.sort()
    keys = np.array([r[0] for r in rows], dtype=np.uint64)
    off = np.zeros(len(rows) + 1, dtype=np.int64)
    off[1:] = np.cumsum([len(r[1]) for r in rows]) if rows else []
    buf = np.frombuffer(b"".join(r[1] for r in rows) or b"\x00", dtype=np.uint8)
    return K.Allow(keys, buf, off)


@dataclass
class EngineStats:
    processed: int = 0
    parse_errors: int = 0
    prefiltered: int = 0


@dataclass
class Batch:
    """Encoded qnames ready for the kernel."""

    buf: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    splits: np.ndarray

    @classmethod
    def encode(cls, qnames: Sequence[str], extraction: ExtractionConfig) -> Batch:
        n = len(qnames)
        raw = "\n".join(qnames).encode("utf-8")
        buf = np.frombuffer(raw, dtype=np.uint8)
        nl = np.flatnonzero(buf == 10)
        if nl.size == max(n - 1, 0):
            starts = np.empty(n, dtype=np.int64)
            ends = np.empty(n, dtype=np.int64)
            if n:
                starts[0] = 0
                starts[1:] = nl + 1
                ends[:-1] = nl
                ends[-1] = buf.size
        else:
            # some qname contains a newline; fall back to per-name offsets
            parts = [q.encode("utf-8") for q in qnames]
            lens = np.fromiter((len(p) for p in parts), dtype=np.int64, count=n)
            ends = np.cumsum(lens)
            starts = ends - lens
            buf = np.frombuffer(b"".join(parts), dtype=np.uint8)
        if buf.size == 0:
            buf = np.zeros(1, dtype=np.uint8)
        if extraction.suffix_list is None:
            splits = np.full(n, -1, dtype=np.int32)
        else:
            splits = np.empty(n, dtype=np.int32)
            for i, q in enumerate(qnames):
                try:
                    el = parse_qname(q, extraction)
                except QnameError:
                    splits[i] = -2
                    continue
                splits[i] = len(el.subdomain) + 1 if el.subdomain else 0
        return cls(buf, starts, ends, splits)


class IbhhEngine:
    """Sampled cache of per-domain information counters with windowed alerting.

    Args:
        config: engine parameters.
        extraction: how qnames are split into (domain, subdomain).
        prefilter: allowlists applied before the cache; matching domains are
            dropped and never occupy a slot.
        trace: record the post-update estimate of every cached-branch query
            (used by threshold sweeps).
    """

    def __init__(
        self,
        config: EngineConfig | None = None,
        extraction: ExtractionConfig = DEFAULT_EXTRACTION,
        prefilter: Iterable | None = None,
        trace: bool = False,
    ) -> None:
        self.config = config or EngineConfig()
        self.extraction = extraction
        self.trace = trace
        self.stats = EngineStats()
        cfg = self.config
        m = 1 << cfg.precision
        self._params = K.Params(
            k=cfg.cache_size,
            p=cfg.precision,
            m=m,
            alpha_m=alpha(m),
            inv_pow=inverse_powers(cfg.precision),
            hll_seed=np.uint64(cfg.hll_seed),
            pair_seed=np.uint64(cfg.pair_seed),
            encoding=INDEX_ENCODINGS[cfg.index_encoding],
            depth=extraction.label_depth,
            threshold_bytes=float(cfg.threshold_bytes),
            window_seconds=float(cfg.window_seconds),
            window_origin=float(cfg.window_origin or 0.0),
            has_origin=cfg.window_origin is not None,
        )
        self._state = K.new_state(cfg.cache_size, cfg.precision)
        self._prefilter_domains: frozenset[str] = frozenset()
        self.set_prefilter(prefilter)
        self._open: dict[tuple[float, str], Alert] = {}
        self._by_aid: dict[int, Alert] = {}
        self._closed: list[Alert] = []
        self.trace_chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    # -- configuration -----------------------------------------------------

    def set_prefilter(self, allowlists: Iterable | None) -> None:
        domains: set[str] = set()
        for al in allowlists or ():
            domains.update(al.entries if hasattr(al, "entries") else [al])
        self._prefilter_domains = frozenset(d.lower() for d in domains)
        self._allow = _encode_allow(self._prefilter_domains, self.config.pair_seed)

    # -- inspection --------------------------------------------------------

    @property
    def tau(self) -> float:
        return float(self._state.fs[K.F_TAU])

    @property
    def window_start(self) -> float | None:
        if not self._state.ints[K.I_STARTED]:
            return None
        return float(self._state.fs[K.F_WINDOW_START])

    @property
    def threshold_bytes(self) -> float:
        return self.config.threshold_bytes

    @property
    def admissions(self) -> int:
        return int(self._state.ints[K.I_ADMITTED])

    @property
    def evictions(self) -> int:
        return int(self._state.ints[K.I_EVICTED])

    @property
    def resets(self) -> int:
        return int(self._state.ints[K.I_RESETS])

    def __len__(self) -> int:
        return int(self._state.ints[K.I_COUNT])

    def _slots(self) -> Iterable[int]:
        return np.flatnonzero(self._state.occupied)

    def _slot_domain(self, s: int) -> str:
        st = self._state
        return st.dom[s, : st.dlen[s]].tobytes().decode("utf-8")

    def domains(self) -> list[str]:
        return sorted(self._slot_domain(s) for s in self._slots())

    def seeds(self) -> dict[str, float]:
        return {self._slot_domain(s): float(self._state.seeds[s]) for s in self._slots()}

    def estimates(self) -> dict[str, float]:
        return {self._slot_domain(s): float(self._state.est[s]) for s in self._slots()}

    def _find(self, domain: str) -> int:
        d = domain.lower().encode("utf-8")
        buf = as_u8(d + b"\x00")
        key, _ = K.pair_unit(buf, 0, len(d), len(d), len(d), self._params.pair_seed)
        return int(K.table_find(self._state, np.uint64(key), buf, 0, len(d)))

    def __contains__(self, domain: str) -> bool:
        return self._find(domain) >= 0

    def estimate(self, domain: str) -> float | None:
        s = self._find(domain)
        return None if s < 0 else float(self._state.est[s])

    def seed_of(self, domain: str) -> float | None:
        s = self._find(domain)
        return None if s < 0 else float(self._state.seeds[s])

    def sketch(self, domain: str) -> HllSketch | None:
        s = self._find(domain)
        if s < 0:
            return None
        sk = HllSketch(self.config.precision, self.config.hll_seed)
        sk.registers[:] = self._state.regs[s]
        return sk

    def memory_bytes(self) -> int:
        """Bytes held by the engine's state arrays."""
        arrays = list(self._state) + list(self._allow) + [self._params.inv_pow]
        return int(sum(a.nbytes for a in arrays))

    # -- processing --------------------------------------------------------

    def process_batch(
        self,
        qnames: Sequence[str],
        times: Sequence[float] | np.ndarray,
        clients: Sequence[str | None] | None = None,
    ) -> list[Alert]:
        """Feed a time-ordered batch of queries; return newly raised alerts."""
        n = len(qnames)
        if n == 0:
            return []
        batch = Batch.encode(qnames, self.extraction)
        return self._run(batch, np.ascontiguousarray(times, dtype=np.float64), qnames, clients)

    def _run(self, batch: Batch, times: np.ndarray, qnames, clients, index_map=None) -> list[Alert]:
        n = batch.starts.shape[0]
        out = K.new_outputs(n, self.config.cache_size, self.trace)
        K.process_batch(
            self._state, self._params, self._allow, batch.buf, batch.starts, batch.ends,
            batch.splits, times, out, self.trace,
        )
        status = out.status
        self.stats.processed += n
        self.stats.parse_errors += int(np.count_nonzero(status == K.ST_PARSE_ERROR))
        self.stats.prefiltered += int(np.count_nonzero(status == K.ST_ALLOWLISTED))
        if self.trace:
            self.trace_chunks.append((out.trace_est, out.trace_key, out.trace_win))
        return self._collect(out, times, qnames, clients, index_map)

    def _collect(self, out: K.Outputs, times, qnames, clients, index_map=None) -> list[Alert]:
        new: list[Alert] = []
        for c in range(int(out.counts[0])):
            j = int(out.fire_idx[c])
            i = j if index_map is None else int(index_map[j])
            aid = int(out.fire_aid[c])
            ws = float(out.fire_win[c])
            domain = parse_qname(qnames[i], self.extraction).domain
            prev = self._open.get((ws, domain))
            if prev is not None:
                # re-admitted after eviction within the same window
                prev.suppressed_repeat_count += 1
                self._by_aid[aid] = prev
                continue
            alert = Alert(
                domain=domain,
                window_start=ws,
                event_time=float(times[j]),
                estimated_bytes=float(out.fire_est[c]),
                threshold_bytes=self.config.threshold_bytes,
                client=clients[i] if clients is not None else None,
            )
            self._open[(ws, domain)] = alert
            self._by_aid[aid] = alert
            new.append(alert)
        self._apply_repeats(out)
        self._close_windows()
        return new

    def _apply_repeats(self, out: K.Outputs) -> None:
        for r in range(int(out.counts[1])):
            self._by_aid[int(out.rep_aid[r])].suppressed_repeat_count += int(out.rep_cnt[r])

    def _close_windows(self, everything: bool = False) -> None:
        current = self.window_start
        done = [
            key for key in self._open
            if everything or current is None or key[0] < current
        ]
        if not done:
            return
        closing = {id(self._open[key]) for key in done}
        for key in done:
            self._closed.append(self._open.pop(key))
        self._by_aid = {a: al for a, al in self._by_aid.items() if id(al) not in closing}

    def process(
        self,
        element: StreamElement,
        event_time: float,
        client: str | None = None,
    ) -> Alert | None:
        """Process one already-extracted stream element."""
        qname = element.qname()
        split = len(element.subdomain) + 1 if element.subdomain else 0
        raw = qname.encode("utf-8")
        batch = Batch(
            buf=as_u8(raw) if raw else np.zeros(1, dtype=np.uint8),
            starts=np.zeros(1, dtype=np.int64),
            ends=np.array([len(raw)], dtype=np.int64),
            splits=np.array([split], dtype=np.int32),
        )
        alerts = self._run(batch, np.array([event_time], dtype=np.float64), [qname], [client])
        return alerts[0] if alerts else None

    def process_event(self, event: DnsQueryEvent) -> Alert | None:
        alerts = self.process_batch([event.qname], [event.ts], [event.client])
        return alerts[0] if alerts else None

    def process_events(self, events: Iterable[DnsQueryEvent], batch_size: int = 65536) -> list[Alert]:
        alerts: list[Alert] = []
        q: list[str] = []
        t: list[float] = []
        c: list[str] = []
        for ev in events:
            q.append(ev.qname)
            t.append(ev.ts)
            c.append(ev.client)
            if len(q) >= batch_size:
                alerts.extend(self.process_batch(q, t, c))
                q, t, c = [], [], []
        if q:
            alerts.extend(self.process_batch(q, t, c))
        return alerts

    def reset(self, new_window_start: float) -> None:
        """Flush the cache and start a new window at ``new_window_start``."""
        out = K.new_outputs(0, self.config.cache_size, False)
        K.force_reset(self._state, out, float(new_window_start))
        self._apply_repeats(out)
        self._close_windows()

    def flush(self) -> None:
        """Settle repeat counts of alerts in the open window."""
        out = K.new_outputs(0, self.config.cache_size, False)
        K.flush_repeats(self._state, out)
        self._apply_repeats(out)

    def pop_closed(self) -> list[Alert]:
        """Alerts whose window has ended; their repeat counts are final."""
        done, self._closed = self._closed, []
        return done

    def finish(self) -> list[Alert]:
        """End of stream: settle and return every alert not yet popped."""
        self.flush()
        self._close_windows(everything=True)
        return self.pop_closed()

    # -- checkpoints -------------------------------------------------------

    def snapshot(self) -> bytes:
        """Versioned binary image of the full engine state."""
        cfg = self.config
        st = self._state
        head = struct.pack(
            "<4sBIBBBdddQBddqqqqI",
            SNAPSHOT_MAGIC,
            SNAPSHOT_VERSION,
            cfg.cache_size,
            cfg.precision,
            INDEX_ENCODINGS[cfg.index_encoding],
            cfg.window_origin is not None,
            cfg.window_seconds,
            cfg.threshold_bps,
            cfg.window_origin or 0.0,
            cfg.hash_seed & MASK64,
            int(st.ints[K.I_STARTED]),
            float(st.fs[K.F_TAU]),
            float(st.fs[K.F_WINDOW_START]),
            int(st.ints[K.I_NEXT_ALERT]),
            int(st.ints[K.I_ADMITTED]),
            int(st.ints[K.I_EVICTED]),
            int(st.ints[K.I_RESETS]),
            len(self),
        )
        parts = [head]
        slots = sorted(self._slots(), key=lambda s: st.dom[s, : st.dlen[s]].tobytes())
        for s in slots:
            d = st.dom[s, : st.dlen[s]].tobytes()
            sk = HllSketch(cfg.precision, cfg.hll_seed)
            sk.registers[:] = st.regs[s]
            parts.append(struct.pack("<H", len(d)) + d)
            parts.append(struct.pack("<dqq", st.seeds[s], st.alert_ids[s], st.repeats[s]))
            parts.append(sk.to_bytes())
        aids: dict[int, list[int]] = {}
        for aid, al in self._by_aid.items():
            aids.setdefault(id(al), []).append(aid)
        extra = {
            "stats": asdict(self.stats),
            "open": [
                {"alert": al.to_dict(), "aids": sorted(aids.get(id(al), []))}
                for al in self._open.values()
            ],
            "closed": [al.to_dict() for al in self._closed],
            "prefilter": sorted(self._prefilter_domains),
        }
        blob = json.dumps(extra, separators=(",", ":"), sort_keys=True).encode("utf-8")
        parts.append(struct.pack("<I", len(blob)) + blob)
        return b"".join(parts)

    @classmethod
    def restore(
        cls,
        data: bytes,
        extraction: ExtractionConfig = DEFAULT_EXTRACTION,
        trace: bool = False,
    ) -> IbhhEngine:
        fmt = "<4sBIBBBdddQBddqqqqI"
        if len(data) < struct.calcsize(fmt):
            raise SnapshotError("checkpoint too short")
        (magic, version, k, p, enc, has_origin, window, thr, origin, seed, started, tau, ws,
         next_aid, admitted, evicted, resets, n) = struct.unpack_from(fmt, data)
        if magic != SNAPSHOT_MAGIC:
            raise SnapshotError("not an engine checkpoint")
        if version != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported checkpoint version {version}")
        encoding = {v: key for key, v in INDEX_ENCODINGS.items()}[enc]
        cfg = EngineConfig(
            cache_size=k, window_seconds=window, threshold_bps=thr, precision=p,
            hash_seed=seed, index_encoding=encoding,
            window_origin=origin if has_origin else None,
        )
        eng = cls(cfg, extraction, trace=trace)
        st = eng._state
        pos = struct.calcsize(fmt)
        sk_len = 10 + (1 << p)
        for s in range(n):
            (dl,) = struct.unpack_from("<H", data, pos)
            pos += 2
            d = data[pos : pos + dl]
            pos += dl
            seed_v, aid, rep = struct.unpack_from("<dqq", data, pos)
            pos += 24
            sk = HllSketch.from_bytes(data[pos : pos + sk_len])
            pos += sk_len
            if sk.precision_bits != p or sk.hash_seed != cfg.hll_seed:
                raise SnapshotError("sketch parameters do not match engine config")
            st.regs[s] = sk.registers
            st.hist[s] = np.bincount(sk.registers, minlength=st.hist.shape[1])
            st.est[s] = K.estimate_from_hist(
                st.hist[s], eng._params.m, eng._params.alpha_m, eng._params.inv_pow
            )
            st.dom[s, :dl] = np.frombuffer(d, dtype=np.uint8)
            st.dlen[s] = dl
            key, _ = K.pair_unit(
                as_u8(d + b"\x00"), 0, dl, dl, dl, eng._params.pair_seed
            )
            st.keys[s] = key
            st.seeds[s] = seed_v
            st.alert_ids[s] = aid
            st.repeats[s] = rep
            st.occupied[s] = True
        K.rebuild_table(st)
        st.ints[K.I_COUNT] = n
        st.ints[K.I_STARTED] = started
        st.ints[K.I_NEXT_ALERT] = next_aid
        st.ints[K.I_ADMITTED] = admitted
        st.ints[K.I_EVICTED] = evicted
        st.ints[K.I_RESETS] = resets
        st.fs[K.F_TAU] = tau
        st.fs[K.F_WINDOW_START] = ws
        (blen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        extra = json.loads(data[pos : pos + blen].decode("utf-8"))
        if pos + blen != len(data):
            raise SnapshotError("trailing bytes in checkpoint")
        eng.stats = EngineStats(**extra["stats"])
        eng.set_prefilter(extra["prefilter"])
        for row in extra["open"]:
            al = Alert.from_dict(row["alert"])
            eng._open[(al.window_start, al.domain)] = al
            for aid in row["aids"]:
                eng._by_aid[aid] = al
        eng._closed = [Alert.from_dict(r) for r in extra["closed"]]
        return eng


def run_engine(
    events: Iterable[DnsQueryEvent],
    config: EngineConfig,
    extraction: ExtractionConfig = DEFAULT_EXTRACTION,
    prefilter: Iterable | None = None,
    batch_size: int = 65536,
) -> tuple[list[Alert], IbhhEngine]:
    """Replay a whole stream; return final alerts (closed, with repeat counts)."""
    eng = IbhhEngine(config, extraction, prefilter)
    eng.process_events(events, batch_size)
    return eng.finish(), eng


__all__ = [
    "Alert",
    "EngineConfig",
    "EngineStats",
    "IbhhEngine",
    "pair_hash",
    "run_engine",
]
