"""Threshold tuning, detection experiments and method comparison.

Host-level metrics follow the triggering client of each alert: a host is
alerted when some alert names it as ``client``. Infected hosts are clients
that sent at least one query labelled with an attack tool.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .allowlist import Allowlist, generate_peacetime, load_toplist, post_filter
from .engine import Alert, EngineConfig, IbhhEngine
from .paxson import COMPRESSOR, PaxsonDetector
from .runner import METHODS, detect
from .stream import DEFAULT_EXTRACTION, DnsQueryEvent, ExtractionConfig, parse_qname, read_events
from .errors import ConfigurationError, QnameError
from .traffic import BENIGN

logger = logging.getLogger(__name__)

EventSource = str | Path | Sequence[DnsQueryEvent]


def default_grid(fine_step: float = 0.1, fine_max: float = 1.0,
                 coarse_step: float = 1.0, coarse_max: float = 400.0) -> np.ndarray:
    """Fine steps from 0 to ``fine_max``, then coarse steps up to ``coarse_max`` (B/s)."""
    fine = np.round(np.arange(0.0, fine_max + fine_step / 2, fine_step), 10)
    coarse = np.arange(fine_max + coarse_step, coarse_max + coarse_step / 2, coarse_step)
    return np.concatenate([fine, coarse])


def load_source(src: EventSource | None) -> list[DnsQueryEvent]:
    if src is None:
        return []
    if isinstance(src, (str, Path)):
        return list(read_events(src))
    return list(src)


# -- labels and metrics -----------------------------------------------------


@dataclass
class GroundTruth:
    clients: set[str]
    infected: set[str]
    attack_domains: set[str]
    labelled: bool

    @classmethod
    def from_events(cls, events: Iterable[DnsQueryEvent],
                    extraction: ExtractionConfig = DEFAULT_EXTRACTION) -> GroundTruth:
        clients: set[str] = set()
        infected: set[str] = set()
        attack: set[str] = set()
        labelled = False
        for e in events:
            clients.add(e.client)
            if e.label is None:
                continue
            labelled = True
            if e.label != BENIGN:
                infected.add(e.client)
                try:
                    attack.add(parse_qname(e.qname, extraction).domain)
                except QnameError:
                    pass
        return cls(clients, infected, attack, labelled)

    @property
    def clean(self) -> set[str]:
        return self.clients - self.infected


def host_rates(alerts: Iterable[Alert], truth: GroundTruth) -> tuple[float, float]:
    hosts = {a.client for a in alerts if a.client is not None}
    tpr = len(hosts & truth.infected) / len(truth.infected) if truth.infected else 0.0
    clean = truth.clean
    fpr = len(hosts & clean) / len(clean) if clean else 0.0
    return tpr, fpr


@dataclass
class Metrics:
    tp_domains: int
    fp_domains: int
    tp_queries: int
    fp_queries: int
    host_tpr: float | None
    host_fpr: float | None
    alerts: int
    per_window_alerts: dict[str, int]


def compute_metrics(alerts: Sequence[Alert], truth: GroundTruth) -> Metrics:
    """Pure function of the alert list and the labelled stream's ground truth."""
    attack = truth.attack_domains
    tp_d = {a.domain for a in alerts if a.domain in attack}
    fp_d = {a.domain for a in alerts if a.domain not in attack}
    tp_q = sum(a.firing_count for a in alerts if a.domain in attack)
    fp_q = sum(a.firing_count for a in alerts if a.domain not in attack)
    per_window = Counter(repr(a.window_start) for a in alerts)
    if truth.labelled:
        tpr, fpr = host_rates(alerts, truth)
    else:
        logger.warning("stream has no labels; host metrics omitted")
        tpr = fpr = None
    return Metrics(len(tp_d), len(fp_d), tp_q, fp_q, tpr, fpr, len(alerts),
                   dict(sorted(per_window.items(), key=lambda kv: float(kv[0]))))


# -- threshold sweeps -------------------------------------------------------


@dataclass
class Crossing:
    """One (window, domain) group: which client triggers the alert at each threshold."""

    domain: str
    window_start: float
    levels: np.ndarray  # running-max estimates at successive record highs
    clients: list[str | None]  # triggering client for each record high


def _ibhh_crossings(events: Sequence[DnsQueryEvent], config: EngineConfig,
                    extraction: ExtractionConfig, prefilter) -> list[Crossing]:
    eng = IbhhEngine(config.replace(threshold_bps=1e300), extraction, prefilter, trace=True)
    eng.process_events(events)
    if not eng.trace_chunks:
        return []
    est = np.concatenate([c[0] for c in eng.trace_chunks])
    key = np.concatenate([c[1] for c in eng.trace_chunks])
    win = np.concatenate([c[2] for c in eng.trace_chunks])
    idx = np.flatnonzero(~np.isnan(est))
    if idx.size == 0:
        return []
    order = np.lexsort((idx, key[idx], win[idx]))
    idx = idx[order]
    out: list[Crossing] = []
    gk, gw = key[idx], win[idx]
    bounds = np.flatnonzero((np.diff(gk) != 0) | (np.diff(gw) != 0)) + 1
    for seg in np.split(idx, bounds):
        vals = est[seg]
        runmax = np.maximum.accumulate(vals)
        # positions where a new strict record is set
        rec = np.flatnonzero(np.concatenate([[True], runmax[1:] > runmax[:-1]]))
        rec = rec[vals[rec] > 0]
        if rec.size == 0:
            continue
        first = events[int(seg[0])]
        out.append(Crossing(
            domain=parse_qname(first.qname, extraction).domain,
            window_start=float(win[seg[0]]),
            levels=vals[rec],
            clients=[events[int(seg[r])].client for r in rec],
        ))
    return out


def _paxson_crossings(events: Sequence[DnsQueryEvent], config: EngineConfig,
                      extraction: ExtractionConfig, prefilter) -> list[Crossing]:
    det = PaxsonDetector(config.window_seconds, 1e300, window_origin=config.window_origin)
    det.keep_results = True
    blocked = set()
    for al in prefilter or ():
        blocked |= set(al.entries)
    for e in events:
        try:
            el = parse_qname(e.qname, extraction)
        except QnameError:
            continue
        if el.domain not in blocked:
            det.observe(el, e.ts, e.client)
    det.finish()
    return [
        Crossing(r.domain, ws, np.array([float(r.upper_bound_bytes)]), [r.client])
        for ws, r in det.results
    ]


def crossings(events: Sequence[DnsQueryEvent], config: EngineConfig, method: str = "ibhh",
              extraction: ExtractionConfig = DEFAULT_EXTRACTION,
              prefilter=None) -> list[Crossing]:
    if method == "ibhh":
        return _ibhh_crossings(events, config, extraction, prefilter)
    if method == "paxson":
        return _paxson_crossings(events, config, extraction, prefilter)
    raise ValueError(f"unknown method {method!r}")


def alerts_at(cross: Sequence[Crossing], threshold_bytes: float) -> list[tuple[str, float, str | None]]:
    """(domain, window_start, triggering client) of every alert at a byte threshold."""
    out = []
    for c in cross:
        pos = np.flatnonzero(c.levels > threshold_bytes)
        if pos.size:
            out.append((c.domain, c.window_start, c.clients[int(pos[0])]))
    return out


@dataclass
class SweepPoint:
    threshold_bps: float
    host_fpr: float
    fp_domains: int
    alerts: int


def sweep(events: Sequence[DnsQueryEvent], config: EngineConfig, grid: Sequence[float],
          method: str = "ibhh", extraction: ExtractionConfig = DEFAULT_EXTRACTION,
          allowlists: Sequence[Allowlist] = (), truth: GroundTruth | None = None) -> list[SweepPoint]:
    """Host FPR at every grid threshold from a single replay."""
    truth = truth or GroundTruth.from_events(events, extraction)
    cross = crossings(events, config, method, extraction)
    blocked = set()
    for al in allowlists:
        blocked |= set(al.entries)
    clean = truth.clean
    points = []
    for t in grid:
        hits = [h for h in alerts_at(cross, t * config.window_seconds) if h[0] not in blocked]
        hosts = {c for _, _, c in hits if c is not None}
        fpr = len(hosts & clean) / len(clean) if clean else 0.0
        fp_dom = len({d for d, _, _ in hits if d not in truth.attack_domains})
        points.append(SweepPoint(float(t), fpr, fp_dom, len(hits)))
    return points


@dataclass
class TuneResult:
    threshold_bps: float | None
    achieved_fpr: float
    attainable: bool
    sweep: list[SweepPoint] = field(repr=False, default_factory=list)


def tune_threshold(
    train: EventSource,
    config: EngineConfig,
    acceptable_fpr: float,
    grid: Sequence[float] | None = None,
    method: str = "ibhh",
    extraction: ExtractionConfig = DEFAULT_EXTRACTION,
    allowlists: Sequence[Allowlist] = (),
) -> TuneResult:
    """Smallest grid threshold whose host FPR on ``train`` is at most ``acceptable_fpr``.

    If no grid value qualifies, the result is marked unattainable and
    carries the best FPR seen (at the threshold that achieved it).
    """
    events = load_source(train)
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    points = sweep(events, config, grid, method, extraction, allowlists)
    for pt in points:
        if pt.host_fpr <= acceptable_fpr:
            return TuneResult(pt.threshold_bps, pt.host_fpr, True, points)
    best = min(points, key=lambda p: (p.host_fpr, p.threshold_bps))
    return TuneResult(None, best.host_fpr, False, points)


# -- experiments ------------------------------------------------------------


@dataclass
class ExperimentConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    method: str = "ibhh"
    acceptable_fpr: float = 0.01
    train: EventSource | None = None
    peacetime: EventSource | None = None
    test: EventSource | None = None
    toplist: str | Path | None = None
    toplist_max_rank: int = 1_000_000
    allowlist_paths: tuple[str, ...] = ()
    allowlist_mode: str = "post"
    threshold_bps: float | None = None
    grid: Sequence[float] | None = None
    extraction: ExtractionConfig = DEFAULT_EXTRACTION
    seeds: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if not 0 < self.acceptable_fpr < 1:
            raise ConfigurationError("acceptable_fpr must be in (0, 1)")
        if self.allowlist_mode not in ("pre", "post"):
            raise ConfigurationError("allowlist_mode must be 'pre' or 'post'")


@dataclass
class MetricsReport:
    method: str
    acceptable_fpr: float
    tuned_threshold_bps: float | None
    train_fpr: float | None
    threshold_attainable: bool
    tp_domains: int
    fp_domains: int
    tp_queries: int
    fp_queries: int
    host_tpr: float | None
    host_fpr: float | None
    host_fpr_pre_allowlist: float | None
    fp_domains_pre_allowlist: int
    fp_queries_pre_allowlist: int
    alerts: int
    alerts_suppressed: int
    per_window_alerts: dict[str, int]
    infected_hosts: int
    clean_hosts: int
    peacetime_domains: int
    header: dict

    @property
    def der_bps(self) -> float | None:
        """Detectable exfiltration rate: the tuned threshold."""
        return self.tuned_threshold_bps

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class ExperimentRun:
    report: MetricsReport
    alerts: list[Alert]
    raw_alerts: list[Alert]
    allowlists: list[Allowlist]


def _allowlists(cfg: ExperimentConfig) -> list[Allowlist]:
    lists = []
    if cfg.toplist:
        lists.append(load_toplist(cfg.toplist, cfg.toplist_max_rank, cfg.extraction))
    for p in cfg.allowlist_paths:
        lists.append(Allowlist.load(p))
    return lists


def execute(cfg: ExperimentConfig) -> ExperimentRun:
    """Tune (if needed), build the peacetime list, run the test stream, score it."""
    ext = cfg.extraction
    static = _allowlists(cfg)
    threshold = cfg.threshold_bps
    train_fpr = None
    attainable = True
    if threshold is None:
        res = tune_threshold(cfg.train, cfg.engine, cfg.acceptable_fpr, cfg.grid, cfg.method,
                             ext, static)
        attainable = res.attainable
        train_fpr = res.achieved_fpr
        if res.threshold_bps is None:
            grid = default_grid() if cfg.grid is None else cfg.grid
            threshold = float(max(grid))
        else:
            threshold = res.threshold_bps
    engine_cfg = cfg.engine.replace(threshold_bps=threshold)
    lists = list(static)
    peace = None
    if cfg.peacetime is not None:
        peace = generate_peacetime(engine_cfg, load_source(cfg.peacetime), ext, cfg.method)
        lists.append(peace)
    test = load_source(cfg.test)
    truth = GroundTruth.from_events(test, ext)
    raw = detect(test, engine_cfg, cfg.method, ext)
    if cfg.allowlist_mode == "pre" and lists:
        kept = detect(test, engine_cfg, cfg.method, ext, prefilter=lists)
        suppressed = len(raw) - len(kept)
    else:
        kept, suppressed = post_filter(raw, lists)
    m = compute_metrics(kept, truth)
    m_raw = compute_metrics(raw, truth)
    header = {
        "hash_seed": cfg.engine.hash_seed,
        "seeds": dict(cfg.seeds),
        "engine": asdict(engine_cfg),
        "allowlist_mode": cfg.allowlist_mode,
        "label_depth": ext.label_depth,
        "suffix_list": ext.suffix_list_path,
        "name": cfg.name,
    }
    if cfg.method == "paxson":
        header["compressor"] = COMPRESSOR
    report = MetricsReport(
        method=cfg.method,
        acceptable_fpr=cfg.acceptable_fpr,
        tuned_threshold_bps=threshold,
        train_fpr=train_fpr,
        threshold_attainable=attainable,
        tp_domains=m.tp_domains,
        fp_domains=m.fp_domains,
        tp_queries=m.tp_queries,
        fp_queries=m.fp_queries,
        host_tpr=m.host_tpr,
        host_fpr=m.host_fpr,
        host_fpr_pre_allowlist=m_raw.host_fpr,
        fp_domains_pre_allowlist=m_raw.fp_domains,
        fp_queries_pre_allowlist=m_raw.fp_queries,
        alerts=m.alerts,
        alerts_suppressed=suppressed,
        per_window_alerts=m.per_window_alerts,
        infected_hosts=len(truth.infected),
        clean_hosts=len(truth.clean),
        peacetime_domains=len(peace) if peace is not None else 0,
        header=header,
    )
    return ExperimentRun(report, kept, raw, lists)


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    return execute(cfg).report


# -- comparison report ------------------------------------------------------

COMPARE_COLUMNS = (
    "method", "acceptable_fpr", "der_bps", "train_fpr", "host_tpr", "host_fpr",
    "host_fpr_pre_allowlist", "tp_domains", "fp_domains", "tp_queries", "fp_queries",
)


def _row(r: MetricsReport) -> dict:
    return {
        "method": r.method,
        "acceptable_fpr": r.acceptable_fpr,
        "der_bps": r.der_bps,
        "train_fpr": r.train_fpr,
        "host_tpr": r.host_tpr,
        "host_fpr": r.host_fpr,
        "host_fpr_pre_allowlist": r.host_fpr_pre_allowlist,
        "tp_domains": r.tp_domains,
        "fp_domains": r.fp_domains,
        "tp_queries": r.tp_queries,
        "fp_queries": r.fp_queries,
    }


@dataclass
class ComparisonReport:
    rows: list[dict]
    reports: list[MetricsReport]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=COMPARE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: "" if v is None else v for k, v in row.items()})
        return buf.getvalue()

    def to_table(self) -> str:
        if not self.rows:
            return "(no experiments)\n"

        def fmt(v):
            if v is None:
                return "-"
            if isinstance(v, float):
                return f"{v:.4g}"
            return str(v)

        cells = [[fmt(r[c]) for c in COMPARE_COLUMNS] for r in self.rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(COMPARE_COLUMNS)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(COMPARE_COLUMNS, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
        return "\n".join(line.rstrip() for line in lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "reports": [r.to_dict() for r in self.reports]},
                          indent=2, sort_keys=True)


def compare_methods(configs: Iterable[ExperimentConfig]) -> ComparisonReport:
    reports = [run_experiment(c) for c in configs]
    return ComparisonReport([_row(r) for r in reports], reports)


def group_alerts_by_window(alerts: Iterable[Alert]) -> dict[float, list[Alert]]:
    out: dict[float, list[Alert]] = defaultdict(list)
    for a in alerts:
        out[a.window_start].append(a)
    return dict(out)
