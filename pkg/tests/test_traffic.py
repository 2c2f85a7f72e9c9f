from __future__ import annotations

import pytest

import oracle
from infohh.errors import ConfigurationError
from infohh.stream import parse_qname
from infohh.traffic import (
    BENIGN,
    AttackSpec,
    BenignSpec,
    distinct_information,
    gen_attack,
    gen_benign,
    inject_attacks,
    merge_streams,
)

SMALL = BenignSpec(n_clients=50, n_domains=300, duration=300, rate=20, seed=4)


def test_benign_is_deterministic():
    assert gen_benign(SMALL) == gen_benign(SMALL)
    assert gen_benign(SMALL) != gen_benign(BenignSpec(**{**SMALL.__dict__, "seed": 5}))


def test_benign_shape():
    evs = gen_benign(SMALL)
    assert len(evs) == SMALL.query_count
    assert all(e.label == BENIGN for e in evs)
    assert [e.ts for e in evs] == sorted(e.ts for e in evs)
    for e in evs:
        parse_qname(e.qname)


def test_pool_only_background_has_bounded_subdomains():
    spec = BenignSpec(n_clients=20, n_domains=100, weights=(0.0, 1.0, 0.0), pool_size=3,
                      duration=100, rate=50, seed=1)
    per_dom: dict[str, set] = {}
    for e in gen_benign(spec):
        el = parse_qname(e.qname)
        per_dom.setdefault(el.domain, set()).add(el.subdomain)
    assert max(len(s) for s in per_dom.values()) <= 3


@pytest.mark.parametrize(
    "kwargs",
    [{"weights": (0.5, 0.5, 0.5)}, {"weights": (1.0, 0.0)}, {"n_clients": 0}, {"duration": 0}],
)
def test_benign_validation(kwargs):
    with pytest.raises(ConfigurationError):
        BenignSpec(**kwargs)


def test_frameworkpos_three_queries_per_second():
    evs = gen_attack(AttackSpec("frameworkpos", "pos.com", "h1", query_count=300, seed=2))
    gaps = {round(b.ts - a.ts, 9) for a, b in zip(evs, evs[1:])}
    assert gaps == {round(1 / 3, 9)}
    subs = [parse_qname(e.qname).subdomain for e in evs]
    assert all(len(s) == 40 and set(s) <= set("0123456789abcdef") for s in subs)
    assert len(set(subs)) == 300
    assert AttackSpec("frameworkpos", "pos.com", "h1").analytic_rate() == pytest.approx(120.0)


def test_denis_rate():
    spec = AttackSpec("denis", "d.com", "h1", query_count=200)
    assert spec.analytic_rate() == pytest.approx(10.0)
    evs = gen_attack(spec)
    info = distinct_information(evs)["d.com"]
    assert info == 15 * 200


def test_iodine_fills_the_name():
    evs = gen_attack(AttackSpec("iodine", "tunnel.com", "h1", query_count=100))
    assert all(len(e.qname) == 253 for e in evs)
    els = [parse_qname(e.qname) for e in evs]
    assert {el.domain for el in els} == {"tunnel.com"}
    assert len({el.subdomain for el in els}) == 100


@pytest.mark.parametrize("count", [99, 10_001])
def test_query_count_range(count):
    with pytest.raises(ConfigurationError):
        AttackSpec("denis", "d.com", "h1", query_count=count)


def test_unknown_tool():
    with pytest.raises(ConfigurationError):
        AttackSpec("dnscat", "d.com", "h1")


def test_merge_is_sorted_and_stable():
    a = gen_attack(AttackSpec("denis", "a.com", "h1", query_count=100, gap=1.0))
    b = gen_attack(AttackSpec("denis", "b.com", "h2", query_count=100, gap=1.0))
    m = merge_streams(a, b)
    assert [e.ts for e in m] == sorted(e.ts for e in m)
    assert [parse_qname(e.qname).domain for e in m[:2]] == ["a.com", "b.com"]


def test_inject_attacks():
    benign = gen_benign(SMALL)
    sc = inject_attacks(benign, "frameworkpos", n_hosts=3, seed=1, query_range=(100, 200))
    assert len(sc.attacks) == 3 and len(sc.attack_domains) == 3
    assert sc.infected_clients <= {e.client for e in benign}
    attack_evs = [e for e in sc.events if e.label == "frameworkpos"]
    assert len(attack_evs) == sum(a.query_count for a in sc.attacks)
    assert {parse_qname(e.qname).domain for e in attack_evs} == sc.attack_domains
    assert sc.events == inject_attacks(benign, "frameworkpos", n_hosts=3, seed=1,
                                       query_range=(100, 200)).events
    with pytest.raises(ConfigurationError):
        inject_attacks(benign, "denis", n_hosts=10_000)


def test_distinct_information_matches_oracle():
    evs = gen_benign(SMALL)
    pairs = [(parse_qname(e.qname).domain, parse_qname(e.qname).subdomain) for e in evs]
    assert distinct_information(evs) == oracle.exact_information(pairs)


@pytest.mark.parametrize("tool", ["iodine", "frameworkpos", "denis"])
def test_measured_rate_equals_analytic_rate(tool):
    spec = AttackSpec(tool, "rate-test.com", "h1", query_count=500, seed=3)
    evs = gen_attack(spec)
    info = distinct_information(evs)["rate-test.com"]
    assert info == spec.subdomain_length() * spec.query_count
    assert info / (spec.query_count * spec.effective_gap) == pytest.approx(spec.analytic_rate())
