"""Compression-bound baseline over query names.

Per window, each domain keeps the distinct subdomains it received. At the
end of the window the newline-joined list is compressed and the compressed
size is the upper bound on information sent to that domain.

The compressor is raw DEFLATE at level 9 with fixed Huffman codes, so
the bound reflects repetition across queries (LZ77 matches) rather than
the skew of the encoding alphabet. Bytes below 144 cost exactly eight bits
as literals, which keeps the bound in the same byte units as the
length-based information weight.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

from .engine import Alert
from .stream import StreamElement

COMPRESSOR = "deflate-raw/level=9/strategy=fixed"


def compressed_size(data: bytes) -> int:
    c = zlib.compressobj(level=9, method=zlib.DEFLATED, wbits=-15, strategy=zlib.Z_FIXED)
    return len(c.compress(data) + c.flush())


@dataclass
class _Bucket:
    subdomains: list[str] = field(default_factory=list)
    seen: set[str] = field(default_factory=set)
    queries: int = 0
    last_time: float = 0.0
    clients: dict[str, int] = field(default_factory=dict)


@dataclass
class PaxsonResult:
    domain: str
    upper_bound_bytes: int
    alert: bool
    client: str | None = None
    queries: int = 0
    last_time: float = 0.0


class PaxsonWindow:
    """Windowed per-domain buffers of distinct subdomains.

    Args:
        window_seconds: aggregation window.
        threshold_bps: alert when the bound exceeds ``threshold_bps * window_seconds``.
        per_client: key buffers by (domain, client) instead of domain.
    """

    def __init__(self, window_seconds: float = 120.0, threshold_bps: float = 250.0,
                 per_client: bool = False) -> None:
        self.window_seconds = window_seconds
        self.threshold_bps = threshold_bps
        self.per_client = per_client
        self.window_start: float | None = None
        self.buffers: dict[tuple[str, str], _Bucket] = {}

    @property
    def threshold_bytes(self) -> float:
        return self.threshold_bps * self.window_seconds

    def observe(self, element: StreamElement, event_time: float = 0.0,
                client: str | None = None) -> None:
        key = (element.domain, (client or "") if self.per_client else "")
        b = self.buffers.get(key)
        if b is None:
            b = self.buffers[key] = _Bucket()
        if element.subdomain not in b.seen:
            b.seen.add(element.subdomain)
            b.subdomains.append(element.subdomain)
            if client is not None:
                b.clients[client] = b.clients.get(client, 0) + 1
        b.queries += 1
        b.last_time = event_time

    def flush(self) -> list[PaxsonResult]:
        """Bound every buffered domain, then clear. Results are sorted by domain."""
        out = []
        thr = self.threshold_bytes
        for (domain, client), b in sorted(self.buffers.items()):
            bound = compressed_size("\n".join(b.subdomains).encode("utf-8"))
            if self.per_client:
                who = client or None
            elif b.clients:
                # client that contributed the most distinct subdomains
                who = min(b.clients.items(), key=lambda kv: (-kv[1], kv[0]))[0]
            else:
                who = None
            out.append(PaxsonResult(domain, bound, bound > thr, who, b.queries, b.last_time))
        self.buffers.clear()
        return out


def paxson_observe(w: PaxsonWindow, element: StreamElement) -> PaxsonWindow:
    w.observe(element)
    return w


def paxson_flush(w: PaxsonWindow) -> list[tuple[str, int, bool]]:
    return [(r.domain, r.upper_bound_bytes, r.alert) for r in w.flush()]


class PaxsonDetector:
    """Drives a ``PaxsonWindow`` over a time-ordered stream and emits alerts."""

    def __init__(self, window_seconds: float = 120.0, threshold_bps: float = 250.0,
                 per_client: bool = False, window_origin: float | None = None) -> None:
        self.window = PaxsonWindow(window_seconds, threshold_bps, per_client)
        self.window_origin = window_origin
        self.results: list[tuple[float, PaxsonResult]] = []
        self.keep_results = False

    def _close(self) -> list[Alert]:
        w = self.window
        ws = w.window_start
        alerts = []
        for r in w.flush():
            if self.keep_results:
                self.results.append((ws, r))
            if r.alert:
                alerts.append(Alert(
                    domain=r.domain,
                    window_start=ws,
                    event_time=r.last_time,
                    estimated_bytes=float(r.upper_bound_bytes),
                    threshold_bytes=w.threshold_bytes,
                    client=r.client,
                    suppressed_repeat_count=r.queries - 1,
                    method="paxson",
                ))
        return alerts

    def observe(self, element: StreamElement, event_time: float,
                client: str | None = None) -> list[Alert]:
        w = self.window
        alerts: list[Alert] = []
        if w.window_start is None:
            if self.window_origin is None:
                w.window_start = event_time
            else:
                steps = (event_time - self.window_origin) // w.window_seconds
                w.window_start = self.window_origin + steps * w.window_seconds
        elif event_time - w.window_start >= w.window_seconds:
            alerts = self._close()
            steps = (event_time - w.window_start) // w.window_seconds
            w.window_start += steps * w.window_seconds
        w.observe(element, event_time, client)
        return alerts

    def finish(self) -> list[Alert]:
        if self.window.window_start is None:
            return []
        return self._close()
