"""DNS query events, (domain, subdomain) extraction and log ingestion.

Logs are JSONL (``{"ts": .., "client": .., "qname": .., "label": ..}``) or
CSV with header ``ts,client,qname[,label]``. Readers stream rows in file
order; malformed rows are skipped and counted.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

from .errors import QnameError

logger = logging.getLogger(__name__)

MAX_QNAME = 255
MAX_LABEL = 63
FORMATS = ("jsonl", "csv")


@dataclass(frozen=True, slots=True)
class DnsQueryEvent:
    ts: float
    client: str
    qname: str
    label: str | None = None

    def to_json(self) -> str:
        row: dict = {"ts": self.ts, "client": self.client, "qname": self.qname}
        if self.label is not None:
            row["label"] = self.label
        return json.dumps(row, separators=(",", ":"))


@dataclass(frozen=True, slots=True)
class StreamElement:
    domain: str
    subdomain: str

    def qname(self) -> str:
        return f"{self.subdomain}.{self.domain}" if self.subdomain else self.domain


class PublicSuffixList:
    """Public-suffix rules (exact, ``*.`` wildcard and ``!`` exception)."""

    def __init__(self, rules: Iterable[str]) -> None:
        self.exact: set[str] = set()
        self.wildcard: set[str] = set()
        self.exception: set[str] = set()
        for raw in rules:
            rule = raw.strip().split()[0].lower() if raw.strip() else ""
            if not rule or rule.startswith("//"):
                continue
            if rule.startswith("!"):
                self.exception.add(rule[1:])
            elif rule.startswith("*."):
                self.wildcard.add(rule[2:])
            else:
                self.exact.add(rule)

    @classmethod
    def load(cls, path: str | Path) -> PublicSuffixList:
        with open(path, encoding="utf-8") as fh:
            return cls(fh)

    def suffix_labels(self, labels: Sequence[str]) -> int:
        """Number of trailing labels forming the public suffix of ``labels`` (lowercase)."""
        n = len(labels)
        best = 1  # implicit "*" rule
        for i in range(n):
            cand = ".".join(labels[i:])
            if cand in self.exception:
                return n - i - 1
            if cand in self.exact:
                best = max(best, n - i)
            if i > 0 and cand in self.wildcard:
                best = max(best, n - i + 1)
        return best


@dataclass(frozen=True)
class ExtractionConfig:
    label_depth: int = 2
    suffix_list_path: str | None = None
    suffix_list: PublicSuffixList | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        from .errors import ConfigurationError

        if self.label_depth < 2:
            raise ConfigurationError(f"label_depth must be >= 2, got {self.label_depth}")
        if self.suffix_list is None and self.suffix_list_path is not None:
            object.__setattr__(self, "suffix_list", PublicSuffixList.load(self.suffix_list_path))


DEFAULT_EXTRACTION = ExtractionConfig()


def _split_labels(qname: str) -> list[str]:
    name = qname[:-1] if qname.endswith(".") else qname
    if not name:
        raise QnameError(qname, "empty name")
    if len(name) > MAX_QNAME:
        raise QnameError(qname, f"longer than {MAX_QNAME} characters")
    if not name.isascii() or not name.isprintable() or " " in name:
        raise QnameError(qname, "non-printable or non-ASCII character")
    labels = name.split(".")
    for lab in labels:
        if not lab:
            raise QnameError(qname, "empty label")
        if len(lab) > MAX_LABEL:
            raise QnameError(qname, f"label longer than {MAX_LABEL} characters")
    return labels


def registered_labels(labels: Sequence[str], config: ExtractionConfig) -> int:
    """How many trailing labels make up the registered domain."""
    if config.suffix_list is not None:
        lowered = [lab.lower() for lab in labels]
        depth = config.suffix_list.suffix_labels(lowered) + 1
    else:
        depth = config.label_depth
    return min(depth, len(labels))


def parse_qname(qname: str, config: ExtractionConfig = DEFAULT_EXTRACTION) -> StreamElement:
    """Split a query name into its registered domain and subdomain.

    >>> parse_qname("a.b.example.com")
    StreamElement(domain='example.com', subdomain='a.b')
    """
    labels = _split_labels(qname)
    depth = registered_labels(labels, config)
    cut = len(labels) - depth
    return StreamElement(".".join(labels[cut:]).lower(), ".".join(labels[:cut]))


def subdomain_length(qname: str, config: ExtractionConfig) -> int:
    """Character offset where the registered domain starts (0 if no subdomain)."""
    el = parse_qname(qname, config)
    return len(el.subdomain) + 1 if el.subdomain else 0


# -- ingestion ---------------------------------------------------------------


class ReadStats:
    def __init__(self) -> None:
        self.rows = 0
        self.bad_rows = 0

    def __repr__(self) -> str:
        return f"ReadStats(rows={self.rows}, bad_rows={self.bad_rows})"


def _coerce(ts, client, qname, label) -> DnsQueryEvent | None:
    try:
        ts = float(ts)
    except (TypeError, ValueError):
        return None
    if not math.isfinite(ts) or ts < 0:
        return None
    if not isinstance(qname, str) or not qname or len(qname) > MAX_QNAME:
        return None
    if client is None:
        client = ""
    if not isinstance(client, str):
        client = str(client)
    if label is not None and not isinstance(label, str):
        return None
    return DnsQueryEvent(ts, client, qname, label or None)


def _iter_jsonl(fh: IO[str], stats: ReadStats) -> Iterator[DnsQueryEvent]:
    for lineno, line in enumerate(fh, 1):
        if not line.strip():
            continue
        stats.rows += 1
        try:
            row = json.loads(line)
            ev = _coerce(row["ts"], row.get("client"), row["qname"], row.get("label"))
        except (ValueError, KeyError, TypeError, AttributeError):
            ev = None
        if ev is None:
            stats.bad_rows += 1
            logger.warning("skipping malformed row %d", lineno)
            continue
        yield ev


def _iter_csv(fh: IO[str], stats: ReadStats) -> Iterator[DnsQueryEvent]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        return
    cols = {name.strip(): i for i, name in enumerate(header)}
    if not {"ts", "qname"} <= cols.keys():
        raise ValueError(f"CSV header must contain ts and qname, got {header}")
    i_ts, i_q = cols["ts"], cols["qname"]
    i_c, i_l = cols.get("client"), cols.get("label")
    for row in reader:
        if not row:
            continue
        stats.rows += 1
        try:
            ev = _coerce(
                row[i_ts],
                row[i_c] if i_c is not None else "",
                row[i_q],
                (row[i_l] or None) if i_l is not None else None,
            )
        except IndexError:
            ev = None
        if ev is None:
            stats.bad_rows += 1
            logger.warning("skipping malformed row %d", reader.line_num)
            continue
        yield ev


def infer_format(path: str | Path) -> str:
    return "csv" if str(path).endswith(".csv") else "jsonl"


def iter_events(
    fh: IO[str], fmt: str = "jsonl", stats: ReadStats | None = None
) -> Iterator[DnsQueryEvent]:
    stats = stats if stats is not None else ReadStats()
    if fmt == "jsonl":
        return _iter_jsonl(fh, stats)
    if fmt == "csv":
        return _iter_csv(fh, stats)
    raise ValueError(f"unknown format {fmt!r}")


def read_events(
    path: str | Path, fmt: str | None = None, stats: ReadStats | None = None
) -> Iterator[DnsQueryEvent]:
    """Stream events from a log file in file order.

    The file is opened eagerly so a missing path fails immediately.
    """
    fmt = fmt or infer_format(path)
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    fh = open(path, encoding="utf-8", newline="")

    def gen() -> Iterator[DnsQueryEvent]:
        with fh:
            yield from iter_events(fh, fmt, stats)

    return gen()


def write_events(events: Iterable[DnsQueryEvent], out: IO[str], fmt: str = "jsonl") -> int:
    n = 0
    if fmt == "jsonl":
        for ev in events:
            out.write(ev.to_json())
            out.write("\n")
            n += 1
    elif fmt == "csv":
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["ts", "client", "qname", "label"])
        for ev in events:
            writer.writerow([repr(ev.ts), ev.client, ev.qname, ev.label or ""])
            n += 1
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return n


def save_events(events: Iterable[DnsQueryEvent], path: str | Path, fmt: str | None = None) -> int:
    fmt = fmt or infer_format(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        return write_events(events, fh, fmt)


def events_from_text(text: str, fmt: str = "jsonl", stats: ReadStats | None = None) -> list[DnsQueryEvent]:
    return list(iter_events(io.StringIO(text), fmt, stats))
