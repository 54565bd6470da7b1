import json
import subprocess
import sys

import pytest
import yaml

from assise.cli import main

from .conftest import ROOT


def _write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def test_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(ROOT / "scenarios" / "maildir-private.yaml"), "--out", str(out)]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "metric\tvalue"
    assert any(r.startswith("steady_hops\t0") for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["ok"] and summary["metrics"]["steady_hops"] == 0
    trace = (out / "trace.tsv").read_text().splitlines()
    assert trace[0].split("\t") == ["time_ns", "kind", "src", "dst", "bytes", "tag"] and len(trace) > 1
    assert json.loads((out / "history.json").read_text())


def test_check_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, "good.yaml", {"name": "g", "workload": {"kind": "kv", "ops": 6},
                                          "checks": ["converged", "leases", "linearizable", "determinism"]})
    assert main(["check", str(good), "--out", str(tmp_path / "g")]) == 0
    assert "FAIL" not in capsys.readouterr().out
    # round-robin delivery must take remote lease hops, so this expectation fails
    bad = _write(tmp_path, "bad.yaml", {"name": "b", "workload": {"kind": "maildir", "pattern": "rr", "deliveries": 30},
                                        "expect": {"steady_hops": {"max": 0}}})
    summary = tmp_path / "s.json"
    assert main(["check", str(bad), "--out", str(tmp_path / "b"), "--summary", str(summary)]) == 1
    assert "expect:steady_hops\tFAIL" in capsys.readouterr().out
    assert json.loads(summary.read_text())["ok"] is False


def test_bad_input_exits_2(tmp_path, capsys):
    assert main(["check", str(tmp_path / "missing.yaml")]) == 2
    bad = _write(tmp_path, "bad.yaml", {"workload": {"kind": "kv"}, "checks": ["vibes"]})
    assert main(["run", str(bad), "--out", str(tmp_path)]) == 2
    assert "unknown checks" in capsys.readouterr().err
    cfg = _write(tmp_path, "cfg.yaml", {"version": 1, "nodes": ["n0"], "timeouts": {"lunch": "1s"}})
    good = _write(tmp_path, "ok.yaml", {"workload": {"kind": "kv", "ops": 4}})
    assert main(["run", str(good), "--config", str(cfg), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_config_flag_and_seed_override(tmp_path, capsys):
    sc = _write(tmp_path, "sc.yaml", {"workload": {"kind": "kv", "ops": 6, "nodes": 2}})
    cfg = ROOT / "configs" / "three-node.yaml"
    runs = []
    for seed in ("1", "1", "2"):
        out = tmp_path / seed
        assert main(["run", str(sc), "--config", str(cfg), "--seed", seed, "--out", str(out)]) == 0
        runs.append(json.loads((out / "summary.json").read_text()))
    capsys.readouterr()
    assert runs[0]["seed"] == 1 and runs[2]["seed"] == 2
    assert runs[0]["metrics"]["trace_hash"] == runs[1]["metrics"]["trace_hash"]


def test_trace_command(tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", str(ROOT / "scenarios" / "maildir-sharded.yaml"), "--out", str(out)])
    capsys.readouterr()
    assert main(["trace", str(out / "trace.tsv"), "--tag", "SEGMENT_WRITE", "--limit", "3"]) == 0
    text = capsys.readouterr().out
    body, table = text.split("\n\n", 1)
    assert 0 < len(body.splitlines()) <= 3
    assert table.splitlines()[0] == "tag\tmessages" and table.splitlines()[1].startswith("SEGMENT_WRITE\t")


def test_small_sweeps(tmp_path, capsys):
    rc = main(["sweep", "log-size", "--file-size", "2MiB", "--logs", "256KiB,512KiB,1MiB",
               "--out", str(tmp_path / "l")])
    rows = capsys.readouterr().out.splitlines()
    assert rc == 0 and len(rows) == 4
    s = json.loads((tmp_path / "l" / "summary.json").read_text())
    assert s["monotone"] and s["digests_match"]
    rc = main(["sweep", "recovery", "--datasets", "1MiB,4MiB", "--log-fill", "256KiB", "--out", str(tmp_path / "r")])
    assert rc == 0
    s = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert s["hot_spread"][1] <= 0.05 and s["cold_spread"][1] > 1.0


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "assise", "check", str(ROOT / "scenarios" / "maildir-private.yaml"),
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert r.stdout.splitlines()[0].startswith("check\tstatus")
