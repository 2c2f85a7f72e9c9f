"""Domain allowlists: ranked top-lists and learned peacetime lists.

An allowlist can be used before the engine (matching domains never take a
cache slot) or after it (alerts for matching domains are dropped).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .engine import Alert, EngineConfig
from .errors import QnameError
from .stream import DEFAULT_EXTRACTION, DnsQueryEvent, ExtractionConfig, parse_qname

logger = logging.getLogger(__name__)

STATIC_TOPLIST = "static_toplist"
PEACETIME = "peacetime"

_HOSTNAME = re.compile(r"^(?=.{1,255}$)([A-Za-z0-9_](?:[A-Za-z0-9_-]{0,61}[A-Za-z0-9_])?\.)*"
                       r"[A-Za-z0-9_](?:[A-Za-z0-9_-]{0,61}[A-Za-z0-9_])?\.?$")


@dataclass(frozen=True)
class Allowlist:
    entries: frozenset[str]
    source: str = STATIC_TOPLIST
    warnings: int = field(default=0, compare=False)

    def __contains__(self, domain: str) -> bool:
        return domain.lower() in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def save(self, path: str | Path) -> None:
        """One lowercase domain per line, sorted."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for d in sorted(self.entries):
                fh.write(d + "\n")

    @classmethod
    def load(cls, path: str | Path, source: str = PEACETIME) -> Allowlist:
        return load_toplist(path, max_rank=None, source=source)


def _registered(name: str, extraction: ExtractionConfig) -> str | None:
    if not _HOSTNAME.match(name):
        return None
    try:
        return parse_qname(name, extraction).domain
    except QnameError:
        return None


def load_toplist(
    path: str | Path,
    max_rank: int | None = 1_000_000,
    extraction: ExtractionConfig = DEFAULT_EXTRACTION,
    source: str = STATIC_TOPLIST,
) -> Allowlist:
    """Read a ``rank,domain`` CSV (Tranco layout) or a plain one-domain-per-line file.

    Domains are reduced to their registered domain. Rows that do not parse
    are skipped and counted in ``Allowlist.warnings``.
    """
    entries: set[str] = set()
    bad = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "," in line:
                rank_s, _, name = line.partition(",")
                try:
                    rank = int(rank_s)
                except ValueError:
                    bad += 1
                    logger.warning("%s:%d: bad rank %r", path, lineno, rank_s)
                    continue
            else:
                rank, name = lineno, line
            domain = _registered(name.strip(), extraction)
            if domain is None:
                bad += 1
                logger.warning("%s:%d: not a domain %r", path, lineno, name)
                continue
            if max_rank is None or rank <= max_rank:
                entries.add(domain)
    return Allowlist(frozenset(entries), source, bad)


def generate_peacetime(
    config: EngineConfig,
    events: Iterable[DnsQueryEvent],
    extraction: ExtractionConfig = DEFAULT_EXTRACTION,
    method: str = "ibhh",
) -> Allowlist:
    """Run a detector without enforcement and allowlist every domain it alerts on."""
    from .runner import detect

    alerts = detect(events, config, method=method, extraction=extraction)
    return Allowlist(frozenset(a.domain for a in alerts), PEACETIME)


def is_allowed(allowlists: Allowlist | Sequence[Allowlist], domain: str) -> bool:
    if isinstance(allowlists, Allowlist):
        allowlists = [allowlists]
    d = domain.lower()
    return any(d in al.entries for al in allowlists)


def post_filter(
    alerts: Iterable[Alert], allowlists: Sequence[Allowlist]
) -> tuple[list[Alert], int]:
    """Drop alerts for allowlisted domains; return (kept, suppressed count)."""
    kept: list[Alert] = []
    dropped = 0
    for a in alerts:
        if allowlists and is_allowed(allowlists, a.domain):
            dropped += 1
        else:
            kept.append(a)
    return kept, dropped


def union(allowlists: Iterable[Allowlist]) -> frozenset[str]:
    out: set[str] = set()
    for al in allowlists:
        out |= al.entries
    return frozenset(out)
