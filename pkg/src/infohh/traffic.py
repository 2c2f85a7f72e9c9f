"""Seeded synthetic DNS workloads: benign background and three exfiltration tools.

Every generator is a pure function of its parameters (which carry the seed),
and every event carries a label: ``"benign"`` or the tool name.

* iodine: back-to-back tunnel queries, qnames filled close to the 255-char
  limit with base32 labels.
* frameworkpos: one hex token per query (an encoded card record) at three
  queries per second.
* denis: short keep-alive tokens every 1.5 seconds.

Attack subdomains embed a per-query counter, so they are unique by
construction rather than by chance.
"""

from __future__ import annotations

import heapq
import math
import string
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError
from .stream import DEFAULT_EXTRACTION, DnsQueryEvent, ExtractionConfig, parse_qname

TOOLS = ("iodine", "frameworkpos", "denis")
BENIGN = "benign"

BASE32 = "abcdefghijklmnopqrstuvwxyz234567"
HEX = "0123456789abcdef"
B64ISH = string.ascii_letters + string.digits + "-_"
LOWER = string.ascii_lowercase

DEFAULT_GAP = {"iodine": 0.05, "frameworkpos": 1.0 / 3.0, "denis": 1.5}
DEFAULT_TOKEN = {"iodine": None, "frameworkpos": 40, "denis": 15}
_ALPHABET = {"iodine": BASE32, "frameworkpos": HEX, "denis": B64ISH}
MIN_QUERIES, MAX_QUERIES = 100, 10_000
IODINE_QNAME_LEN = 253


@dataclass(frozen=True)
class AttackSpec:
    """One infected host talking to its own attacker domain.

    ``gap`` and ``token_length`` default per tool; iodine ignores
    ``token_length`` and fills the qname instead.
    """

    tool: str
    domain: str
    client_id: str
    start_time: float = 0.0
    query_count: int = 1000
    seed: int = 0
    gap: float | None = None
    token_length: int | None = None
    fixed_labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.tool not in TOOLS:
            raise ConfigurationError(f"unknown tool {self.tool!r}; expected one of {TOOLS}")
        if not MIN_QUERIES <= self.query_count <= MAX_QUERIES:
            raise ConfigurationError(
                f"query_count must be in [{MIN_QUERIES}, {MAX_QUERIES}], got {self.query_count}"
            )
        if self.gap is not None and self.gap <= 0:
            raise ConfigurationError("gap must be positive")
        tl = self.token_length
        if tl is not None and not 5 <= tl <= 63:
            raise ConfigurationError("token_length must be in [5, 63]")

    @property
    def effective_gap(self) -> float:
        return self.gap if self.gap is not None else DEFAULT_GAP[self.tool]

    @property
    def effective_token_length(self) -> int:
        if self.token_length is not None:
            return self.token_length
        return DEFAULT_TOKEN[self.tool] or 0

    def subdomain_length(self) -> int:
        if self.tool == "iodine":
            return IODINE_QNAME_LEN - len(self.domain) - 1
        return self.effective_token_length + sum(len(f) + 1 for f in self.fixed_labels)

    def analytic_rate(self) -> float:
        """Distinct information per second, in bytes (all subdomains are unique)."""
        return self.subdomain_length() / self.effective_gap

    @property
    def duration(self) -> float:
        return (self.query_count - 1) * self.effective_gap


def _counter_token(rng: np.random.Generator, alphabet: str, length: int, counter: int) -> str:
    base = len(alphabet) if len(alphabet) < 32 else 32
    head = []
    for _ in range(4):
        head.append(alphabet[counter % base])
        counter //= base
    tail = rng.integers(0, len(alphabet), size=length - 4)
    return "".join(head) + "".join(alphabet[t] for t in tail)


def _chunk_labels(s: str, size: int = 63) -> str:
    return ".".join(s[i : i + size] for i in range(0, len(s), size))


def _attack_events(spec: AttackSpec, make_sub) -> list[DnsQueryEvent]:
    rng = np.random.default_rng(spec.seed)
    gap = spec.effective_gap
    out = []
    for j in range(spec.query_count):
        sub = make_sub(rng, j)
        out.append(DnsQueryEvent(spec.start_time + j * gap, spec.client_id,
                                 f"{sub}.{spec.domain}", spec.tool))
    return out


def gen_iodine(spec: AttackSpec) -> list[DnsQueryEvent]:
    total = spec.subdomain_length()
    if total < 10:
        raise ConfigurationError(f"domain {spec.domain!r} leaves no room for a tunnel payload")
    # payload chars + separating dots must equal the subdomain length
    chars = total
    while chars + (math.ceil(chars / 63) - 1) > total:
        chars -= 1

    def make(rng, j):
        return _chunk_labels(_counter_token(rng, BASE32, chars, j))

    return _attack_events(spec, make)


def _token_sub(spec: AttackSpec):
    alphabet = _ALPHABET[spec.tool]
    length = spec.effective_token_length
    suffix = "".join("." + f for f in spec.fixed_labels)

    def make(rng, j):
        return _counter_token(rng, alphabet, length, j) + suffix

    return make


def gen_frameworkpos(spec: AttackSpec) -> list[DnsQueryEvent]:
    return _attack_events(spec, _token_sub(spec))


def gen_denis(spec: AttackSpec) -> list[DnsQueryEvent]:
    return _attack_events(spec, _token_sub(spec))


GENERATORS = {"iodine": gen_iodine, "frameworkpos": gen_frameworkpos, "denis": gen_denis}


def gen_attack(spec: AttackSpec) -> list[DnsQueryEvent]:
    return GENERATORS[spec.tool](spec)


@dataclass(frozen=True)
class BenignSpec:
    """Background traffic model.

    Domains are drawn by Zipf popularity. Each domain is assigned one
    subdomain behaviour with probabilities ``weights`` =
    (no subdomain, fixed pool of ``pool_size`` names, unique name per query).
    """

    n_clients: int = 1000
    n_domains: int = 10_000
    zipf_s: float = 1.1
    weights: tuple[float, float, float] = (0.5, 0.45, 0.05)
    pool_size: int = 5
    duration: float = 3600.0
    rate: float = 100.0
    start_time: float = 0.0
    seed: int = 0
    client_prefix: str = "h"

    def __post_init__(self) -> None:
        if len(self.weights) != 3 or any(w < 0 for w in self.weights):
            raise ConfigurationError("weights must be three non-negative numbers")
        if not math.isclose(sum(self.weights), 1.0, abs_tol=1e-9):
            raise ConfigurationError(f"weights must sum to 1, got {sum(self.weights)}")
        if self.n_clients < 1 or self.n_domains < 1 or self.pool_size < 1:
            raise ConfigurationError("n_clients, n_domains and pool_size must be positive")
        if self.duration <= 0 or self.rate < 0:
            raise ConfigurationError("duration must be positive and rate non-negative")

    @property
    def query_count(self) -> int:
        return int(round(self.duration * self.rate))


_TLDS = ("com", "net", "org", "io")


def benign_domain(rank: int) -> str:
    return f"site{rank}.{_TLDS[rank % len(_TLDS)]}"


def client_name(prefix: str, i: int) -> str:
    return f"{prefix}{i:05d}"


def zipf_probabilities(n: int, s: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** -s
    return w / w.sum()


def gen_benign(spec: BenignSpec) -> list[DnsQueryEvent]:
    rng = np.random.default_rng(spec.seed)
    n = spec.query_count
    modes = rng.choice(3, size=spec.n_domains, p=np.asarray(spec.weights))
    pools: dict[int, list[str]] = {}
    ranks = rng.choice(spec.n_domains, size=n, p=zipf_probabilities(spec.n_domains, spec.zipf_s))
    times = np.sort(rng.uniform(spec.start_time, spec.start_time + spec.duration, size=n))
    clients = rng.integers(0, spec.n_clients, size=n)
    picks = rng.integers(0, spec.pool_size, size=n)
    uniq_len = rng.integers(8, 21, size=n)
    letters = np.array(list(LOWER + string.digits))
    out = []
    for i in range(n):
        d = int(ranks[i])
        domain = benign_domain(d + 1)
        mode = modes[d]
        if mode == 0:
            qname = domain
        elif mode == 1:
            pool = pools.get(d)
            if pool is None:
                prng = np.random.default_rng([spec.seed, d])
                pool = pools[d] = [
                    "".join(prng.choice(list(LOWER), size=int(prng.integers(3, 11))))
                    for _ in range(spec.pool_size)
                ]
            qname = f"{pool[picks[i]]}.{domain}"
        else:
            token = "".join(rng.choice(letters, size=int(uniq_len[i])))
            qname = f"{token}.{domain}"
        out.append(DnsQueryEvent(float(times[i]), client_name(spec.client_prefix, int(clients[i])),
                                 qname, BENIGN))
    return out


def merge_streams(*streams: Iterable[DnsQueryEvent]) -> list[DnsQueryEvent]:
    """Stable merge by timestamp; ties keep the order of the input streams."""
    return list(heapq.merge(*streams, key=lambda e: e.ts))


@dataclass
class Scenario:
    events: list[DnsQueryEvent]
    attacks: list[AttackSpec] = field(default_factory=list)

    @property
    def infected_clients(self) -> set[str]:
        return {a.client_id for a in self.attacks}

    @property
    def attack_domains(self) -> set[str]:
        return {a.domain for a in self.attacks}


def inject_attacks(
    benign: Sequence[DnsQueryEvent],
    tool: str,
    n_hosts: int | None = None,
    fraction: float = 0.01,
    seed: int = 0,
    query_range: tuple[int, int] = (MIN_QUERIES, MAX_QUERIES),
    start_range: tuple[float, float] | None = None,
    domain_template: str = "{tool}{index}-exfil{seed}.com",
    **attack_kwargs,
) -> Scenario:
    """Infect a sample of the benign clients, each with its own attacker domain.

    Hosts are sampled from the clients present in ``benign``; query counts
    and start times are drawn uniformly from the given ranges.
    """
    rng = np.random.default_rng([seed, 0xA77AC])
    clients = sorted({e.client for e in benign})
    if n_hosts is None:
        n_hosts = max(1, int(round(fraction * len(clients))))
    if n_hosts > len(clients):
        raise ConfigurationError(f"cannot infect {n_hosts} of {len(clients)} clients")
    chosen = [clients[i] for i in sorted(rng.choice(len(clients), size=n_hosts, replace=False))]
    if start_range is None:
        t0 = benign[0].ts if benign else 0.0
        t1 = benign[-1].ts if benign else 0.0
        start_range = (t0, t1)
    attacks = []
    for j, client in enumerate(chosen):
        count = int(rng.integers(query_range[0], query_range[1] + 1))
        start = float(rng.uniform(*start_range)) if start_range[1] > start_range[0] else start_range[0]
        domain = domain_template.format(index=j, tool=tool, seed=seed)
        attacks.append(AttackSpec(tool, domain, client, start, count,
                                  seed=int(rng.integers(0, 2**63)), **attack_kwargs))
    streams = [list(benign)] + [gen_attack(a) for a in attacks]
    return Scenario(merge_streams(*streams), attacks)


def distinct_information(
    events: Iterable[DnsQueryEvent], extraction: ExtractionConfig = DEFAULT_EXTRACTION
) -> dict[str, int]:
    """Exact per-domain sum of lengths of distinct subdomains."""
    seen: dict[str, set[str]] = defaultdict(set)
    for e in events:
        el = parse_qname(e.qname, extraction)
        seen[el.domain].add(el.subdomain)
    return {d: sum(len(s) for s in subs) for d, subs in seen.items()}
