"""Command-line entry point: detect, peacetime, tune, gen, bench, experiment, compare.

Options come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then explicit flags. The effective configuration is
echoed to stderr as one JSON line so every run can be replayed.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
import tracemalloc
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .allowlist import Allowlist, generate_peacetime, is_allowed, load_toplist
from .engine import EngineConfig, IbhhEngine
from .errors import ConfigurationError, InfohhError
from .evaluation import ExperimentConfig, compare_methods, default_grid, execute, tune_threshold
from .runner import METHODS, iter_alerts
from .stream import FORMATS, ExtractionConfig, read_events, write_events
from .traffic import TOOLS, BenignSpec, gen_benign, inject_attacks

logger = logging.getLogger("infohh")

# Shared options and their built-in defaults.
DEFAULTS = {
    "input": None,
    "format": None,
    "cache_size": 1000,
    "window_secs": 120.0,
    "threshold_bps": 250.0,
    "allowlist": [],
    "allowlist_mode": "post",
    "label_depth": 2,
    "suffix_list": None,
    "hash_seed": 0,
    "hll_precision": 12,
    "index_encoding": "paper",
    "method": "ibhh",
    "out": None,
    "seed": 0,
    "shards": 1,
    "log_level": "WARNING",
}

_TYPES = {
    "cache_size": int,
    "window_secs": float,
    "threshold_bps": float,
    "label_depth": int,
    "hash_seed": int,
    "hll_precision": int,
    "seed": int,
    "shards": int,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    # defaults are SUPPRESS so we can tell which flags were given explicitly
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="key = value file; flags override it")
    p.add_argument("--input", default=S, help="query log (JSONL or CSV)")
    p.add_argument("--format", choices=FORMATS, default=S, help="input/output format (default: by extension)")
    p.add_argument("--cache-size", type=int, default=S, help="cache entries k (default 1000)")
    p.add_argument("--window-secs", type=float, default=S, help="reset window in seconds (default 120)")
    p.add_argument("--threshold-bps", type=float, default=S, help="alert threshold in bytes/second (default 250)")
    p.add_argument("--allowlist", action="append", default=S, help="allowlist file (repeatable)")
    p.add_argument("--allowlist-mode", choices=("pre", "post"), default=S, help="filter before or after the engine")
    p.add_argument("--label-depth", type=int, default=S, help="labels in a registered domain (default 2)")
    p.add_argument("--suffix-list", default=S, help="public suffix list file")
    p.add_argument("--hash-seed", type=int, default=S, help="engine hash seed (default 0)")
    p.add_argument("--hll-precision", type=int, default=S, help="sketch precision p (default 12)")
    p.add_argument("--index-encoding", choices=("paper", "fixed"), default=S,
                   help="how the per-byte index is appended before hashing")
    p.add_argument("--method", choices=METHODS, default=S, help="detector (default ibhh)")
    p.add_argument("--out", default=S, help="output path (default stdout)")
    p.add_argument("--seed", type=int, default=S, help="generator / experiment seed")
    p.add_argument("--shards", type=int, default=S, help="domain-partitioned worker threads (default 1)")
    p.add_argument("--log-level", default=S, help="logging level (default WARNING)")


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; dashes and underscores are interchangeable."""
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip().strip("\"'")
            if key == "allowlist":
                out.setdefault("allowlist", []).extend(v.strip() for v in value.split(",") if v.strip())
            elif key in _TYPES:
                out[key] = _TYPES[key](value)
            else:
                out[key] = value
    return out


def resolve(args: argparse.Namespace, extra_defaults: dict | None = None) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(extra_defaults or {})
    given = vars(args).copy()
    given.pop("func", None)
    path = given.pop("config", None)
    if path is not None:
        cfg.update(read_config_file(path))
    cfg.update(given)
    return cfg


def engine_config(cfg: dict) -> EngineConfig:
    return EngineConfig(
        cache_size=cfg["cache_size"],
        window_seconds=cfg["window_secs"],
        threshold_bps=cfg["threshold_bps"],
        precision=cfg["hll_precision"],
        hash_seed=cfg["hash_seed"],
        index_encoding=cfg["index_encoding"],
    )


def extraction_config(cfg: dict) -> ExtractionConfig:
    return ExtractionConfig(label_depth=cfg["label_depth"], suffix_list_path=cfg["suffix_list"])


def load_allowlists(cfg: dict, extraction: ExtractionConfig) -> list[Allowlist]:
    return [load_toplist(p, max_rank=None, extraction=extraction) for p in cfg["allowlist"]]


def echo(cfg: dict, command: str) -> None:
    shown = {k: v for k, v in sorted(cfg.items())}
    print(json.dumps({"command": command, "config": shown}, sort_keys=True), file=sys.stderr)


@contextmanager
def output(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _require(cfg: dict, key: str, flag: str) -> str:
    if not cfg.get(key):
        raise ConfigurationError(f"{flag} is required")
    return cfg[key]


# -- subcommands -------------------------------------------------------------


def cmd_detect(cfg: dict) -> int:
    ext = extraction_config(cfg)
    ecfg = engine_config(cfg)
    lists = load_allowlists(cfg, ext)
    events = read_events(_require(cfg, "input", "--input"), cfg["format"])
    pre = lists if cfg["allowlist_mode"] == "pre" else None
    post = lists if cfg["allowlist_mode"] == "post" else []
    counters: dict = {}
    n_alerts = dropped = 0
    with output(cfg["out"]) as out:
        for alert in iter_alerts(events, ecfg, cfg["method"], ext, pre, shards=cfg["shards"],
                                 counters=counters):
            if post and is_allowed(post, alert.domain):
                dropped += 1
                continue
            out.write(alert.to_json() + "\n")
            n_alerts += 1
    print(f"processed={counters.get('processed', 0)} parse_errors={counters.get('parse_errors', 0)} "
          f"prefiltered={counters.get('prefiltered', 0)} alerts={n_alerts} "
          f"allowlisted_alerts={dropped}", file=sys.stderr)
    return 0


def cmd_peacetime(cfg: dict) -> int:
    ext = extraction_config(cfg)
    events = read_events(_require(cfg, "input", "--input"), cfg["format"])
    al = generate_peacetime(engine_config(cfg), events, ext, cfg["method"])
    with output(cfg["out"]) as out:
        for d in sorted(al.entries):
            out.write(d + "\n")
    print(f"peacetime_domains={len(al)}", file=sys.stderr)
    return 0


def _grid(cfg: dict) -> np.ndarray:
    return default_grid(float(cfg["fine_step"]), float(cfg["fine_max"]),
                        float(cfg["coarse_step"]), float(cfg["grid_max"]))


def cmd_tune(cfg: dict) -> int:
    ext = extraction_config(cfg)
    events = list(read_events(_require(cfg, "input", "--input"), cfg["format"]))
    res = tune_threshold(events, engine_config(cfg), float(cfg["acceptable_fpr"]), _grid(cfg),
                         cfg["method"], ext, load_allowlists(cfg, ext))
    body = {
        "method": cfg["method"],
        "acceptable_fpr": float(cfg["acceptable_fpr"]),
        "threshold_bps": res.threshold_bps,
        "achieved_fpr": res.achieved_fpr,
        "attainable": res.attainable,
    }
    with output(cfg["out"]) as out:
        out.write(json.dumps(body, sort_keys=True) + "\n")
    if not res.attainable:
        print(f"no threshold up to {cfg['grid_max']} B/s reaches FPR {cfg['acceptable_fpr']}; "
              f"best {res.achieved_fpr:.4g}", file=sys.stderr)
    return 0


def cmd_gen(cfg: dict) -> int:
    seed = cfg["seed"]
    weights = tuple(float(w) for w in str(cfg["weights"]).split(","))
    spec = BenignSpec(
        n_clients=int(cfg["clients"]),
        n_domains=int(cfg["domains"]),
        zipf_s=float(cfg["zipf"]),
        weights=weights,
        pool_size=int(cfg["pool_size"]),
        duration=float(cfg["duration"]),
        rate=float(cfg["rate"]),
        seed=seed,
    )
    events = gen_benign(spec)
    n_attacks = 0
    if cfg["tool"]:
        lo, hi = (int(x) for x in str(cfg["queries"]).split(","))
        hosts = int(cfg["hosts"]) if cfg["hosts"] is not None else None
        scen = inject_attacks(events, cfg["tool"], n_hosts=hosts, fraction=float(cfg["fraction"]),
                              seed=seed, query_range=(lo, hi))
        events = scen.events
        n_attacks = len(scen.attacks)
    fmt = cfg["format"] or ("csv" if str(cfg["out"] or "").endswith(".csv") else "jsonl")
    with output(cfg["out"]) as out:
        n = write_events(events, out, fmt)
    print(f"events={n} infected_hosts={n_attacks}", file=sys.stderr)
    return 0


def _synthetic_qnames(n: int, seed: int) -> list[str]:
    rng = np.random.default_rng(seed)
    doms = rng.integers(0, 50_000, size=n)
    toks = rng.integers(0, 2**40, size=n)
    return [f"{t:x}.d{d}.com" for t, d in zip(toks.tolist(), doms.tolist())]


def cmd_bench(cfg: dict) -> int:
    ecfg = engine_config(cfg)
    ext = extraction_config(cfg)
    if cfg["input"]:
        events = list(read_events(cfg["input"], cfg["format"]))
        qnames = [e.qname for e in events]
        times = np.array([e.ts for e in events], dtype=np.float64)
    else:
        n = int(cfg["queries"])
        qnames = _synthetic_qnames(n, cfg["seed"])
        times = np.arange(n, dtype=np.float64) / 1e5
    n = len(qnames)
    batch = int(cfg["batch_size"])
    runs = int(cfg["runs"])
    # warm the compiled kernels outside the timed region
    IbhhEngine(ecfg, ext).process_batch(["a.b.c"], [0.0])
    rates, peaks, alerts = [], [], []
    for _ in range(runs):
        tracemalloc.start()
        eng = IbhhEngine(ecfg, ext)
        t0 = time.perf_counter()
        for i in range(0, n, batch):
            eng.process_batch(qnames[i : i + batch], times[i : i + batch])
        settled = len(eng.finish())
        dt = time.perf_counter() - t0
        peaks.append(tracemalloc.get_traced_memory()[1])
        tracemalloc.stop()
        rates.append(n / dt if n and dt > 0 else None)
        alerts.append(settled)
    if n == 0:
        tput = {"throughput_qps": "N/A", "throughput_min": "N/A", "throughput_max": "N/A",
                "throughput_spread": "N/A"}
    else:
        tput = {
            "throughput_qps": statistics.median(rates),
            "throughput_min": min(rates),
            "throughput_max": max(rates),
            "throughput_spread": (max(rates) - min(rates)) / statistics.median(rates),
        }
    body = {
        "queries": n,
        "runs": runs,
        "batch_size": batch,
        **tput,
        "peak_traced_bytes": max(peaks),
        "engine_state_bytes": IbhhEngine(ecfg, ext).memory_bytes(),
        "alerts": alerts[0],
    }
    with output(cfg["out"]) as out:
        out.write(json.dumps(body, sort_keys=True) + "\n")
    return 0


def _experiment(cfg: dict, method: str, fpr: float) -> ExperimentConfig:
    ext = extraction_config(cfg)
    return ExperimentConfig(
        engine=engine_config(cfg),
        method=method,
        acceptable_fpr=fpr,
        train=cfg["train"],
        peacetime=cfg["peacetime_input"],
        test=_require(cfg, "test", "--test"),
        toplist=cfg["toplist"],
        allowlist_paths=tuple(cfg["allowlist"]),
        allowlist_mode=cfg["allowlist_mode"],
        threshold_bps=None if cfg["fixed_threshold"] is None else float(cfg["fixed_threshold"]),
        grid=_grid(cfg),
        extraction=ext,
        seeds={"seed": cfg["seed"], "hash_seed": cfg["hash_seed"]},
    )


def cmd_experiment(cfg: dict) -> int:
    if cfg["train"] is None and cfg["fixed_threshold"] is None:
        raise ConfigurationError("--train or --fixed-threshold is required")
    run = execute(_experiment(cfg, cfg["method"], float(cfg["acceptable_fpr"])))
    with output(cfg["out"]) as out:
        out.write(run.report.to_json() + "\n")
    if cfg["alerts_out"]:
        with open(cfg["alerts_out"], "w", encoding="utf-8", newline="\n") as fh:
            for a in run.alerts:
                fh.write(a.to_json() + "\n")
    r = run.report
    print(f"threshold_bps={r.tuned_threshold_bps} host_tpr={r.host_tpr} host_fpr={r.host_fpr} "
          f"alerts={r.alerts}", file=sys.stderr)
    return 0


def cmd_compare(cfg: dict) -> int:
    fprs = [float(x) for x in str(cfg["acceptable_fpr"]).split(",") if x.strip()]
    methods = [m for m in str(cfg["methods"]).split(",") if m.strip()]
    configs = [_experiment(cfg, m, f) for f in fprs for m in methods] if cfg["test"] else []
    rep = compare_methods(configs)
    sys.stdout.write(rep.to_table())
    if cfg["out"]:
        Path(cfg["out"]).write_text(rep.to_csv(), encoding="utf-8")
    if cfg["json_out"]:
        Path(cfg["json_out"]).write_text(rep.to_json() + "\n", encoding="utf-8")
    return 0


# -- parser ------------------------------------------------------------------

COMMAND_DEFAULTS = {
    "tune": {"acceptable_fpr": 0.01},
    "gen": {"clients": 1000, "domains": 10_000, "zipf": 1.1, "weights": "0.5,0.45,0.05",
            "pool_size": 5, "duration": 3600.0, "rate": 100.0, "tool": None, "hosts": None,
            "fraction": 0.01, "queries": "100,10000"},
    "bench": {"queries": 1_000_000, "runs": 5, "batch_size": 65536},
    "experiment": {"acceptable_fpr": 0.01, "alerts_out": None},
    "compare": {"acceptable_fpr": "0.01,0.05", "methods": "ibhh,paxson", "json_out": None},
}
_EXPERIMENT_DEFAULTS = {"train": None, "test": None, "peacetime_input": None, "toplist": None,
                        "fixed_threshold": None}
_GRID_DEFAULTS = {"fine_step": 0.1, "fine_max": 1.0, "coarse_step": 1.0, "grid_max": 400.0}
for _c in ("tune", "experiment", "compare"):
    COMMAND_DEFAULTS[_c].update(_GRID_DEFAULTS)
for _c in ("experiment", "compare"):
    COMMAND_DEFAULTS[_c].update(_EXPERIMENT_DEFAULTS)


def _add_grid(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--fine-step", type=float, default=S, help="grid step below --fine-max (default 0.1)")
    p.add_argument("--fine-max", type=float, default=S, help="end of the fine grid (default 1)")
    p.add_argument("--coarse-step", type=float, default=S, help="grid step above --fine-max (default 1)")
    p.add_argument("--grid-max", type=float, default=S, help="largest threshold tried (default 400)")


def _add_experiment(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--train", default=S, help="training stream for threshold tuning")
    p.add_argument("--test", default=S, help="labelled test stream")
    p.add_argument("--peacetime-input", default=S, help="attack-free stream for the peacetime list")
    p.add_argument("--toplist", default=S, help="rank,domain top-list used as a static allowlist")
    p.add_argument("--fixed-threshold", type=float, default=S, help="skip tuning and use this B/s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infohh", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("detect", help="replay a query log and emit alerts as JSONL")
    _add_common(p)

    p = sub.add_parser("peacetime", help="learn an allowlist from an attack-free log")
    _add_common(p)

    p = sub.add_parser("tune", help="smallest threshold meeting a host FPR target")
    _add_common(p)
    p.add_argument("--acceptable-fpr", type=float, default=S, help="target host FPR (default 0.01)")
    _add_grid(p)

    p = sub.add_parser("gen", help="write a seeded synthetic labelled query log")
    _add_common(p)
    p.add_argument("--clients", type=int, default=S, help="benign clients (default 1000)")
    p.add_argument("--domains", type=int, default=S, help="benign domains (default 10000)")
    p.add_argument("--zipf", type=float, default=S, help="domain popularity exponent (default 1.1)")
    p.add_argument("--weights", default=S, help="empty,pool,unique subdomain mix (default 0.5,0.45,0.05)")
    p.add_argument("--pool-size", type=int, default=S, help="names per pool domain (default 5)")
    p.add_argument("--duration", type=float, default=S, help="seconds of traffic (default 3600)")
    p.add_argument("--rate", type=float, default=S, help="benign queries per second (default 100)")
    p.add_argument("--tool", choices=TOOLS, default=S, help="inject this exfiltration tool")
    p.add_argument("--hosts", type=int, default=S, help="infected hosts (overrides --fraction)")
    p.add_argument("--fraction", type=float, default=S, help="share of clients infected (default 0.01)")
    p.add_argument("--queries", default=S, help="min,max queries per attack (default 100,10000)")

    p = sub.add_parser("bench", help="measure detect throughput and memory")
    _add_common(p)
    p.add_argument("--queries", type=int, default=S, help="synthetic stream length without --input (default 1e6)")
    p.add_argument("--runs", type=int, default=S, help="timed repetitions (default 5)")
    p.add_argument("--batch-size", type=int, default=S, help="queries per kernel call (default 65536)")

    p = sub.add_parser("experiment", help="tune, build allowlists, run a test stream, report metrics")
    _add_common(p)
    _add_experiment(p)
    _add_grid(p)
    p.add_argument("--acceptable-fpr", type=float, default=S, help="target host FPR (default 0.01)")
    p.add_argument("--alerts-out", default=S, help="also write the kept alerts as JSONL")

    p = sub.add_parser("compare", help="side-by-side report for several methods and FPR targets")
    _add_common(p)
    _add_experiment(p)
    _add_grid(p)
    p.add_argument("--acceptable-fpr", default=S, help="comma-separated FPR targets (default 0.01,0.05)")
    p.add_argument("--methods", default=S, help="comma-separated methods (default ibhh,paxson)")
    p.add_argument("--json-out", default=S, help="also write the full report as JSON")
    return parser


COMMANDS = {
    "detect": cmd_detect,
    "peacetime": cmd_peacetime,
    "tune": cmd_tune,
    "gen": cmd_gen,
    "bench": cmd_bench,
    "experiment": cmd_experiment,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    del args.command
    try:
        cfg = resolve(args, COMMAND_DEFAULTS.get(command))
        logging.basicConfig(level=str(cfg["log_level"]).upper(),
                            format="%(levelname)s %(name)s: %(message)s")
        echo(cfg, command)
        return COMMANDS[command](cfg)
    except (OSError, InfohhError, ValueError) as exc:
        print(f"infohh {command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
