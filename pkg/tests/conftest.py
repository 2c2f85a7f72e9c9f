from __future__ import annotations

import numpy as np
import pytest

from infohh.stream import DnsQueryEvent


def random_stream(seed: int, n: int, n_domains: int = 30, n_subs: int = 40,
                  duration: float = 100.0, max_sub: int = 20, clients: int = 5,
                  skew: float = 1.0) -> list[DnsQueryEvent]:
    """Time-ordered random queries over a small vocabulary of domains and subdomains."""
    rng = np.random.default_rng(seed)
    w = np.arange(1, n_domains + 1, dtype=float) ** -skew
    doms = rng.choice(n_domains, size=n, p=w / w.sum())
    subs = rng.integers(0, n_subs, size=n)
    lens = rng.integers(0, max_sub + 1, size=n_subs)
    times = np.sort(rng.uniform(0, duration, size=n))
    who = rng.integers(0, clients, size=n)
    alphabet = "abcdefghijklmnopqrstuvwxyz0123456789"
    vocab = ["".join(alphabet[(j * 7 + i * 3) % 36] for i in range(int(lens[j]))) + f"{j}"
             if lens[j] else "" for j in range(n_subs)]
    out = []
    for i in range(n):
        sub = vocab[subs[i]]
        dom = f"dom{doms[i]}.com"
        q = f"{sub}.{dom}" if sub else dom
        out.append(DnsQueryEvent(float(times[i]), f"c{who[i]}", q))
    return out


@pytest.fixture
def make_stream():
    return random_stream
