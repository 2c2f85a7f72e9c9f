from __future__ import annotations

import json

import pytest

from infohh.cli import main, read_config_file
from infohh.stream import read_events

GEN = ["--clients", "60", "--domains", "300", "--duration", "600", "--rate", "15"]


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    paths = {
        "benign": d / "benign.jsonl",
        "iodine": d / "iodine.jsonl",
        "train": d / "train.jsonl",
        "peace": d / "peace.csv",
    }
    assert main(["gen", *GEN, "--seed", "1", "--weights", "0.5,0.5,0", "--out", str(paths["benign"])]) == 0
    assert main(["gen", *GEN, "--seed", "2", "--tool", "iodine", "--hosts", "1",
                 "--queries", "3000,3000", "--out", str(paths["iodine"])]) == 0
    assert main(["gen", *GEN, "--seed", "3", "--out", str(paths["train"])]) == 0
    assert main(["gen", *GEN, "--seed", "4", "--out", str(paths["peace"])]) == 0
    return paths


def alerts_of(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_gen_outputs_labelled_sorted_stream(files):
    evs = list(read_events(files["iodine"]))
    assert [e.ts for e in evs] == sorted(e.ts for e in evs)
    assert {e.label for e in evs} == {"benign", "iodine"}
    assert next(read_events(files["peace"])).label == "benign"


def test_detect_benign_fixture_has_no_alerts(files, tmp_path, capsys):
    out = tmp_path / "a.jsonl"
    assert main(["detect", "--input", str(files["benign"]), "--out", str(out)]) == 0
    assert out.read_text() == ""
    err = capsys.readouterr().err
    assert '"command": "detect"' in err
    assert "alerts=0" in err


def test_detect_iodine_fixture(files, tmp_path, capsys):
    assert main(["detect", "--input", str(files["iodine"]), "--threshold-bps", "250",
                 "--window-secs", "120"]) == 0
    rows = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert any(r["domain"].startswith("iodine0-") for r in rows)
    assert set(rows[0]) >= {"domain", "window_start", "event_time", "estimated_bytes",
                            "threshold_bytes", "client", "suppressed_repeat_count"}


def test_missing_input_is_an_error(tmp_path, capsys):
    assert main(["detect", "--input", str(tmp_path / "nope.jsonl")]) != 0
    assert "nope.jsonl" in capsys.readouterr().err
    assert main(["detect"]) != 0


def test_config_file_and_flag_precedence(files, tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("# detector settings\ncache-size = 50\nthreshold_bps = 999\nmethod = paxson\n")
    assert read_config_file(conf) == {"cache_size": 50, "threshold_bps": 999.0, "method": "paxson"}
    assert main(["detect", "--config", str(conf), "--input", str(files["benign"]),
                 "--threshold-bps", "5", "--out", str(tmp_path / "x.jsonl")]) == 0
    echoed = json.loads(capsys.readouterr().err.splitlines()[0])["config"]
    assert echoed["cache_size"] == 50
    assert echoed["threshold_bps"] == 5.0
    assert echoed["method"] == "paxson"


def test_allowlist_modes(files, tmp_path):
    base = tmp_path / "base.jsonl"
    main(["detect", "--input", str(files["iodine"]), "--threshold-bps", "250", "--out", str(base)])
    domains = sorted({a["domain"] for a in alerts_of(base)})
    allow = tmp_path / "allow.txt"
    allow.write_text("\n".join(domains) + "\n")
    for mode in ("pre", "post"):
        out = tmp_path / f"{mode}.jsonl"
        assert main(["detect", "--input", str(files["iodine"]), "--threshold-bps", "250",
                     "--allowlist", str(allow), "--allowlist-mode", mode, "--out", str(out)]) == 0
        assert alerts_of(out) == []


def test_shards_and_methods(files, tmp_path):
    for extra in (["--shards", "3"], ["--method", "paxson"], ["--index-encoding", "fixed"],
                  ["--hll-precision", "10", "--cache-size", "200"]):
        out = tmp_path / "o.jsonl"
        assert main(["detect", "--input", str(files["iodine"]), "--threshold-bps", "250",
                     "--out", str(out), *extra]) == 0
        assert any(a["domain"].startswith("iodine0-") for a in alerts_of(out))


def test_csv_input(files, tmp_path):
    out = tmp_path / "o.jsonl"
    assert main(["detect", "--input", str(files["peace"]), "--format", "csv", "--out", str(out)]) == 0


def test_peacetime(files, tmp_path):
    out = tmp_path / "pt.txt"
    assert main(["peacetime", "--input", str(files["train"]), "--threshold-bps", "1",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines == sorted(lines) and lines


def test_tune(files, capsys):
    assert main(["tune", "--input", str(files["train"]), "--acceptable-fpr", "0.05"]) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["attainable"] and body["achieved_fpr"] <= 0.05
    assert 0 <= body["threshold_bps"] <= 400


def test_tune_unattainable(files, capsys):
    assert main(["tune", "--input", str(files["train"]), "--acceptable-fpr", "0",
                 "--grid-max", "1.0"]) == 0
    captured = capsys.readouterr()
    assert json.loads(captured.out)["attainable"] is False
    assert "no threshold" in captured.err


def test_bench(capsys, tmp_path):
    assert main(["bench", "--queries", "20000", "--runs", "2"]) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["queries"] == 20000 and body["throughput_qps"] > 0
    assert body["peak_traced_bytes"] > 0 and body["runs"] == 2
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["bench", "--input", str(empty), "--runs", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["throughput_qps"] == "N/A"


def test_experiment_and_compare(files, tmp_path, capsys):
    rep = tmp_path / "rep.json"
    alerts = tmp_path / "alerts.jsonl"
    assert main(["experiment", "--train", str(files["train"]), "--test", str(files["iodine"]),
                 "--peacetime-input", str(files["peace"]), "--out", str(rep),
                 "--alerts-out", str(alerts)]) == 0
    body = json.loads(rep.read_text())
    assert body["host_tpr"] == 1.0 and body["header"]["seeds"]["seed"] == 0
    csv_out = tmp_path / "cmp.csv"
    assert main(["compare", "--train", str(files["train"]), "--test", str(files["iodine"]),
                 "--out", str(csv_out)]) == 0
    table = capsys.readouterr().out
    assert "der_bps" in table and "paxson" in table
    assert len(csv_out.read_text().splitlines()) == 5
    assert main(["compare"]) == 0
    assert "(no experiments)" in capsys.readouterr().out


def test_experiment_needs_threshold_source(files):
    assert main(["experiment", "--test", str(files["iodine"])]) != 0


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "infohh", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("detect", "peacetime", "tune", "gen", "bench"):
        assert sub in res.stdout
