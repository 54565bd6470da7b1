"""Command line: run and check scenarios, run the sweeps, pretty-print traces.

Tables go to stdout as tab-separated text. Every command also writes a JSON
summary (``--summary``, default ``<out>/summary.json``). ``check`` exits 1 if
any checker fails; bad input exits 2.
"""
from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path
from typing import Any, Iterable

from .config import ClusterConfig, parse_size
from .harness import recovery, sweeps
from .harness.scenario import CheckReport, Scenario, ScenarioError, check, run

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def tsv(rows: Iterable[dict], out=None) -> None:
    out = out or sys.stdout
    rows = list(rows)
    if not rows:
        return
    cols = list(rows[0])
    print("\t".join(cols), file=out)
    for r in rows:
        print("\t".join(str(r.get(c, "")) for c in cols), file=out)


def _flat(d: dict, prefix: str = "") -> list[dict]:
    rows = []
    for k, v in d.items():
        if isinstance(v, dict):
            rows += _flat(v, f"{prefix}{k}.")
        else:
            rows.append({"metric": f"{prefix}{k}", "value": v})
    return rows


def _write_summary(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")


def _load(args) -> Scenario:
    base = ClusterConfig.load(args.config) if args.config else None
    sc = Scenario.load(args.scenario, base)
    if args.seed is not None:
        sc.seed = args.seed
    return sc


def _artifacts(out: Path, res) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.tsv").write_text("time_ns\tkind\tsrc\tdst\tbytes\ttag\n" + "\n".join(res.sim.net.trace) + "\n")
    (out / "history.json").write_text(res.history.dumps() + "\n")


def cmd_run(args) -> int:
    sc = _load(args)
    res = run(sc)
    out = Path(args.out)
    _artifacts(out, res)
    m = dict(res.metrics)
    m.update(steady_hops=res.steady_hops, steady_ops=res.steady_ops, trace_hash=res.trace_hash)
    tsv(_flat(m))
    _write_summary(Path(args.summary or out / "summary.json"),
                   {"command": "run", "scenario": sc.name, "seed": sc.seed, "ok": True, "metrics": m,
                    "faults": res.faults_fired})
    return EXIT_OK


def report_rows(rep: CheckReport) -> list[dict]:
    return [{"check": r.name, "status": "PASS" if r.ok else "FAIL", "seconds": f"{r.seconds:.2f}",
             "detail": r.detail.replace("\n", " | ")} for r in rep.results]


def cmd_check(args) -> int:
    sc = _load(args)
    rep = check(sc)
    out = Path(args.out)
    if rep.run is not None:
        _artifacts(out, rep.run)
    rows = report_rows(rep)
    tsv(rows)
    summary: dict[str, Any] = {"command": "check", "scenario": sc.name, "seed": sc.seed, "ok": rep.ok, "checks": rows}
    if rep.run is not None:
        summary["trace_hash"] = rep.run.trace_hash
        summary["metrics"] = rep.run.metrics
    _write_summary(Path(args.summary or out / "summary.json"), summary)
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_sweep(args) -> int:
    base = ClusterConfig.load(args.config) if args.config else None
    out = Path(args.out)
    if args.what == "log-size":
        logs = [parse_size(s) for s in args.logs.split(",")] if args.logs else None
        sw = sweeps.log_size_sweep(parse_size(args.file_size), parse_size(args.io), logs, args.seed or 0, base)
        tsv(sw.rows())
        ok = sw.monotone and sw.digests_match
        data = {"command": "sweep log-size", "ok": ok, "monotone": sw.monotone, "digests_match": sw.digests_match,
                "rows": sw.rows()}
    else:
        ds = [parse_size(s) for s in args.datasets.split(",")] if args.datasets else None
        sw = recovery.recovery_sweep(ds, parse_size(args.log_fill), args.seed or 0)
        tsv(sw.rows())
        hot_t, hot_b = sw.spread("hot")
        cold_t, cold_b = sw.spread("cold")
        ok = hot_t <= 0.05 and hot_b <= 0.05 and cold_t > 1.0
        data = {"command": "sweep recovery", "ok": ok, "hot_spread": [hot_t, hot_b],
                "cold_spread": [cold_t, cold_b], "rows": sw.rows()}
    _write_summary(Path(args.summary or out / "summary.json"), data)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_trace(args) -> int:
    path = Path(args.trace)
    lines = [l for l in path.read_text().splitlines() if l and not l.startswith("time_ns")]
    counts: Counter = Counter()
    shown = 0
    for line in lines:
        t, kind, src, dst, size, tag = line.split("\t")
        if args.tag and tag != args.tag:
            continue
        if args.node and args.node not in (src.split("/")[0], dst.split("/")[0]):
            continue
        counts[tag] += 1
        if args.limit is None or shown < args.limit:
            print(f"{int(t) / 1e6:>12.6f} ms  {kind:<11} {src:>14} -> {dst:<18} {int(size):>8} B  {tag}")
            shown += 1
    print()
    tsv([{"tag": k, "messages": v} for k, v in sorted(counts.items())])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="assise", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, scenario: bool = True):
        if scenario:
            sp.add_argument("scenario", help="scenario YAML file")
        sp.add_argument("--config", help="cluster configuration YAML (used when the scenario has none)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out", help="directory for trace, history and summary")
        sp.add_argument("--summary", default=None, help="summary JSON path")

    common(sub.add_parser("run", help="run a scenario and print its metrics"))
    common(sub.add_parser("check", help="run a scenario and every checker it lists"))
    sw = sub.add_parser("sweep", help="parameter sweeps")
    sw.add_argument("what", choices=["log-size", "recovery"])
    common(sw, scenario=False)
    sw.add_argument("--file-size", default="64MiB")
    sw.add_argument("--io", default="4KiB")
    sw.add_argument("--logs", default=None, help="comma-separated log sizes")
    sw.add_argument("--datasets", default=None, help="comma-separated dataset sizes")
    sw.add_argument("--log-fill", default="1MiB")
    tr = sub.add_parser("trace", help="pretty-print a trace file")
    tr.add_argument("trace")
    tr.add_argument("--tag")
    tr.add_argument("--node")
    tr.add_argument("--limit", type=int)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "check": cmd_check, "sweep": cmd_sweep, "trace": cmd_trace}[args.cmd]
    try:
        return handler(args)
    except (ScenarioError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
