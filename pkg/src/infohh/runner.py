"""Replay a query stream through a detector and yield settled alerts."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from itertools import islice
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _kernel as K
from .engine import Alert, Batch, EngineConfig, EngineStats, IbhhEngine
from .errors import QnameError
from .paxson import PaxsonDetector
from .stream import DEFAULT_EXTRACTION, DnsQueryEvent, ExtractionConfig, parse_qname

METHODS = ("ibhh", "paxson")


def _chunks(events: Iterable[DnsQueryEvent], size: int) -> Iterator[list[DnsQueryEvent]]:
    it = iter(events)
    while chunk := list(islice(it, size)):
        yield chunk


class ShardedEngine:
    """Independent engines over a domain-partitioned key space.

    Each shard has its own cache of ``cache_size`` entries and its own
    ``tau``. Routing uses the domain key hash, so a domain always lands on
    the same shard. Shards run on worker threads (the kernel releases the GIL).
    Without an explicit ``window_origin`` the first event time is used for
    every shard, so all shards share one window grid.
    """

    def __init__(self, shards: int, config: EngineConfig,
                 extraction: ExtractionConfig = DEFAULT_EXTRACTION,
                 prefilter: Iterable | None = None) -> None:
        self._prefilter = list(prefilter or [])
        self.shards = shards
        self.config = config
        self.extraction = extraction
        self.engines: list[IbhhEngine] = []
        if config.window_origin is not None:
            self._start(config)
        self._pool = ThreadPoolExecutor(max_workers=shards) if shards > 1 else None

    def _start(self, config: EngineConfig) -> None:
        self.config = config
        self.engines = [IbhhEngine(config, self.extraction, self._prefilter)
                        for _ in range(self.shards)]

    def process_batch(self, qnames: Sequence[str], times, clients=None) -> list[Alert]:
        if not qnames:
            return []
        batch = Batch.encode(qnames, self.extraction)
        times = np.ascontiguousarray(times, dtype=np.float64)
        if not self.engines:
            self._start(self.config.replace(window_origin=float(times[0])))
        keys = K.domain_keys(batch.buf, batch.starts, batch.ends, batch.splits,
                             self.extraction.label_depth, np.uint64(self.config.pair_seed))
        route = (keys % np.uint64(len(self.engines))).astype(np.int64)
        jobs = []
        for s, eng in enumerate(self.engines):
            idx = np.flatnonzero(route == s)
            if idx.size == 0:
                continue
            sub = Batch(batch.buf, batch.starts[idx], batch.ends[idx], batch.splits[idx])
            jobs.append((eng, sub, np.ascontiguousarray(times[idx]), idx))
        if self._pool is None:
            results = [e._run(b, t, qnames, clients, idx) for e, b, t, idx in jobs]
        else:
            results = list(self._pool.map(lambda j: j[0]._run(j[1], j[2], qnames, clients, j[3]),
                                          jobs))
        return sorted((a for r in results for a in r), key=lambda a: (a.event_time, a.domain))

    def pop_closed(self) -> list[Alert]:
        out = [a for e in self.engines for a in e.pop_closed()]
        return sorted(out, key=lambda a: (a.window_start, a.event_time, a.domain))

    def finish(self) -> list[Alert]:
        out = [a for e in self.engines for a in e.finish()]
        if self._pool is not None:
            self._pool.shutdown()
        return sorted(out, key=lambda a: (a.window_start, a.event_time, a.domain))

    @property
    def stats(self) -> EngineStats:
        total = EngineStats()
        for e in self.engines:
            total.processed += e.stats.processed
            total.parse_errors += e.stats.parse_errors
            total.prefiltered += e.stats.prefiltered
        return total


def iter_alerts(
    events: Iterable[DnsQueryEvent],
    config: EngineConfig,
    method: str = "ibhh",
    extraction: ExtractionConfig = DEFAULT_EXTRACTION,
    prefilter: Iterable | None = None,
    batch_size: int = 65536,
    shards: int = 1,
    counters: dict | None = None,
) -> Iterator[Alert]:
    """Yield alerts as their windows close, with final repeat counts.

    ``counters`` (if given) receives ``processed``, ``parse_errors`` and
    ``prefiltered`` totals once the stream is exhausted.
    """
    if method == "ibhh":
        if shards > 1:
            eng = ShardedEngine(shards, config, extraction, prefilter)
        else:
            eng = IbhhEngine(config, extraction, prefilter)
        for chunk in _chunks(events, batch_size):
            eng.process_batch([e.qname for e in chunk], [e.ts for e in chunk],
                              [e.client for e in chunk])
            yield from eng.pop_closed()
        yield from eng.finish()
        if counters is not None:
            s = eng.stats
            counters.update(processed=s.processed, parse_errors=s.parse_errors,
                            prefiltered=s.prefiltered)
    elif method == "paxson":
        det = PaxsonDetector(config.window_seconds, config.threshold_bps,
                             window_origin=config.window_origin)
        blocked = set()
        for al in prefilter or ():
            blocked |= set(al.entries)
        processed = bad = dropped = 0
        for e in events:
            processed += 1
            try:
                el = parse_qname(e.qname, extraction)
            except QnameError:
                bad += 1
                continue
            if el.domain in blocked:
                dropped += 1
                continue
            yield from det.observe(el, e.ts, e.client)
        yield from det.finish()
        if counters is not None:
            counters.update(processed=processed, parse_errors=bad, prefiltered=dropped)
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def detect(
    events: Iterable[DnsQueryEvent],
    config: EngineConfig,
    method: str = "ibhh",
    extraction: ExtractionConfig = DEFAULT_EXTRACTION,
    prefilter: Iterable | None = None,
    shards: int = 1,
) -> list[Alert]:
    return list(iter_alerts(events, config, method, extraction, prefilter, shards=shards))
