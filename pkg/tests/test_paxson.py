from __future__ import annotations

import random
import string


from infohh.paxson import (
    PaxsonDetector,
    PaxsonWindow,
    compressed_size,
    paxson_flush,
    paxson_observe,
)
from infohh.stream import StreamElement


def el(sub, dom="x.com"):
    return StreamElement(dom, sub)


def test_repeated_subdomain_counted_once():
    w = PaxsonWindow(window_seconds=10, threshold_bps=0)
    for _ in range(50):
        paxson_observe(w, el("samesub"))
    [(dom, bound, alert)] = paxson_flush(w)
    assert dom == "x.com"
    assert bound == compressed_size(b"samesub")
    assert alert


def test_flush_clears_and_sorts():
    w = PaxsonWindow()
    w.observe(el("a", "z.com"))
    w.observe(el("b", "a.com"))
    assert [r.domain for r in w.flush()] == ["a.com", "z.com"]
    assert w.flush() == []


def test_random_names_are_incompressible_and_repeats_are_not():
    rng = random.Random(3)
    alphabet = string.ascii_letters + string.digits + "-_"
    subs = ["".join(rng.choice(alphabet) for _ in range(60)) for _ in range(500)]
    raw = sum(len(s) for s in subs)
    assert compressed_size("\n".join(subs).encode()) >= 0.9 * raw
    text = "\n".join(f"{i:06d}" for i in range(2000)).encode()
    assert compressed_size(text) < len(text)


def test_threshold_is_strict():
    w = PaxsonWindow(window_seconds=1, threshold_bps=compressed_size(b"abc"))
    w.observe(el("abc"))
    assert not w.flush()[0].alert


def test_client_attribution():
    w = PaxsonWindow(threshold_bps=0)
    w.observe(el("a"), 0, "h1")
    w.observe(el("b"), 1, "h2")
    w.observe(el("c"), 2, "h2")
    w.observe(el("a"), 3, "h1")
    assert w.flush()[0].client == "h2"
    w = PaxsonWindow(threshold_bps=0, per_client=True)
    w.observe(el("a"), 0, "h1")
    w.observe(el("b"), 1, "h2")
    assert [(r.domain, r.client) for r in w.flush()] == [("x.com", "h1"), ("x.com", "h2")]


def test_detector_windows():
    det = PaxsonDetector(window_seconds=10, threshold_bps=0.1)
    alerts = []
    for t in range(30):
        alerts += det.observe(el(f"token{t:03d}xxxx"), float(t), "h1")
    alerts += det.finish()
    assert [a.window_start for a in alerts] == [0.0, 10.0, 20.0]
    assert all(a.method == "paxson" and a.suppressed_repeat_count == 9 for a in alerts)
    assert alerts[0].event_time == 9.0


def test_detector_origin_alignment():
    det = PaxsonDetector(window_seconds=10, threshold_bps=0, window_origin=0.0)
    det.observe(el("a"), 15.0)
    assert det.window.window_start == 10.0
    assert PaxsonDetector().finish() == []
