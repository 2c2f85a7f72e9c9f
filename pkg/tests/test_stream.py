from __future__ import annotations

import io

import pytest
from hypothesis import given, settings, strategies as st

from infohh.engine import EngineConfig, IbhhEngine
from infohh.errors import QnameError
from infohh.stream import (
    DnsQueryEvent,
    ExtractionConfig,
    PublicSuffixList,
    ReadStats,
    StreamElement,
    events_from_text,
    parse_qname,
    read_events,
    save_events,
    write_events,
)


@pytest.mark.parametrize(
    "qname,domain,sub",
    [
        ("a.b.example.com", "example.com", "a.b"),
        ("example.com", "example.com", ""),
        ("example.com.", "example.com", ""),
        ("x.Example.COM", "example.com", "x"),
        ("MiXeD.example.com", "example.com", "MiXeD"),
        ("com", "com", ""),
        ("_dmarc.example.org", "example.org", "_dmarc"),
    ],
)
def test_parse_examples(qname, domain, sub):
    assert parse_qname(qname) == StreamElement(domain, sub)


@pytest.mark.parametrize(
    "qname",
    ["", ".", "a..example.com", ".example.com", "a" * 64 + ".com",
     ("a" * 60 + ".") * 4 + "a" * 20, "café.com", "a b.com", "a\tb.com", "a\nb.com"],
)
def test_parse_rejects_malformed(qname):
    with pytest.raises(QnameError) as exc:
        parse_qname(qname)
    assert exc.value.qname == qname


def test_label_depth_three():
    cfg = ExtractionConfig(label_depth=3)
    assert parse_qname("a.b.example.co.uk", cfg) == StreamElement("example.co.uk", "a.b")


def test_qname_reassembles():
    el = parse_qname("x.y.example.com")
    assert el.qname() == "x.y.example.com"
    assert StreamElement("example.com", "").qname() == "example.com"


PSL = PublicSuffixList(["// comment", "com", "co.uk", "*.ck", "!www.ck", "github.io"])


@pytest.mark.parametrize(
    "qname,domain,sub",
    [
        ("a.b.example.co.uk", "example.co.uk", "a.b"),
        ("a.example.com", "example.com", "a"),
        ("x.foo.bar.ck", "foo.bar.ck", "x"),
        ("x.www.ck", "www.ck", "x"),
        ("me.user.github.io", "user.github.io", "me"),
        ("a.b.unknowntld", "b.unknowntld", "a"),
    ],
)
def test_suffix_list_extraction(qname, domain, sub):
    cfg = ExtractionConfig(suffix_list=PSL)
    assert parse_qname(qname, cfg) == StreamElement(domain, sub)


def test_suffix_list_file(tmp_path):
    p = tmp_path / "psl.dat"
    p.write_text("co.uk\n", encoding="utf-8")
    cfg = ExtractionConfig(suffix_list_path=str(p))
    assert parse_qname("q.example.co.uk", cfg).domain == "example.co.uk"


def test_jsonl_row_is_one_event():
    evs = events_from_text('{"ts":1.0,"client":"h1","qname":"a.example.com"}\n')
    assert evs == [DnsQueryEvent(1.0, "h1", "a.example.com")]


def test_bad_rows_are_skipped_and_counted():
    text = "\n".join([
        '{"ts":1.0,"client":"h1","qname":"a.example.com"}',
        "not json",
        '{"ts":"x","client":"h1","qname":"a.example.com"}',
        '{"client":"h1","qname":"a.example.com"}',
        '{"ts":2.0,"client":"h2","qname":"b.example.com","label":"benign"}',
        "",
    ])
    stats = ReadStats()
    evs = events_from_text(text, "jsonl", stats)
    assert [e.ts for e in evs] == [1.0, 2.0]
    assert evs[1].label == "benign"
    assert stats.bad_rows == 3


def test_csv_reading_with_and_without_label():
    stats = ReadStats()
    evs = events_from_text("ts,client,qname\n1,h1,a.example.com\nbad,h1,x.com\n", "csv", stats)
    assert evs == [DnsQueryEvent(1.0, "h1", "a.example.com")]
    assert stats.bad_rows == 1
    evs = events_from_text("ts,client,qname,label\n1.5,h1,a.example.com,denis\n", "csv")
    assert evs[0].label == "denis"


@pytest.mark.parametrize("fmt", ["jsonl", "csv"])
def test_write_read_round_trip(tmp_path, fmt):
    evs = [DnsQueryEvent(0.1 * i, f"h{i % 3}", f"s{i}.example.com", "benign" if i % 2 else None)
           for i in range(20)]
    path = tmp_path / f"x.{fmt}"
    save_events(evs, path, fmt)
    assert list(read_events(path, fmt)) == evs


def test_missing_file_fails_immediately(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_events(tmp_path / "nope.jsonl")


def test_write_unknown_format():
    with pytest.raises(ValueError):
        write_events([], io.StringIO(), "xml")


qname_st = st.text(alphabet="abcXYZ09-_.é ", min_size=0, max_size=30) | st.builds(
    lambda a, b: f"{a}.{b}", st.from_regex(r"[a-z]{1,70}", fullmatch=True),
    st.from_regex(r"[a-z]{1,5}\.com\.?", fullmatch=True),
)


@settings(max_examples=150, deadline=None)
@given(st.lists(qname_st, min_size=1, max_size=20))
def test_engine_extraction_agrees_with_parser(qnames):
    eng = IbhhEngine(EngineConfig(cache_size=100, threshold_bps=1e9))
    eng.process_batch(qnames, [0.0] * len(qnames))
    good = []
    for q in qnames:
        try:
            good.append(parse_qname(q).domain)
        except QnameError:
            pass
    assert eng.stats.parse_errors == len(qnames) - len(good)
    assert sorted(eng.domains()) == sorted(set(good))


def test_engine_extraction_agrees_with_suffix_list():
    cfg = ExtractionConfig(suffix_list=PSL)
    qnames = ["a.b.example.co.uk", "x.foo.bar.ck", "x.www.ck", "bad..name", "me.user.github.io"]
    eng = IbhhEngine(EngineConfig(threshold_bps=1e9), cfg)
    eng.process_batch(qnames, [0.0] * len(qnames))
    assert eng.stats.parse_errors == 1
    assert sorted(eng.domains()) == ["example.co.uk", "foo.bar.ck", "user.github.io", "www.ck"]
