"""Scenario files: a workload, a topology and a fault schedule, plus the checks to run.

A scenario is YAML in the same format family as the cluster configuration::

    version: 1
    name: maildir-rr
    seed: 3
    cluster:              # optional; a ClusterConfig mapping
      nodes: [n0, n1, n2]
    workload:
      kind: maildir
      pattern: rr
      deliveries: 20
    faults:
      - {at: 40, kind: crash-node, target: n0, cut: half, restart_on: n1}
    checks: [converged, leases, linearizable, determinism]
    expect:
      steady_hops: {min: 1}

``checks`` may also name whole-harness suites (``prefix``, ``digest``,
``rejoin``, ``interleavings``) whose parameters come from a ``suites``
mapping keyed by the same name.
"""
from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..config import CONFIG_VERSION, ClusterConfig
from ..errors import SearchBoundExceeded
from . import crashcheck, idempotence, linearize, rejoin, schedules
from .runner import Fault, RunResult, run_workload
from .workloads import build

RUN_CHECKS = ("converged", "leases", "linearizable", "determinism", "conservation")
SUITES = ("prefix", "digest", "rejoin", "interleavings")


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    seed: int
    workload: dict[str, Any]
    cluster: ClusterConfig | None = None
    faults: list[Fault] = field(default_factory=list)
    checks: list[str] = field(default_factory=lambda: ["converged", "leases"])
    expect: dict[str, Any] = field(default_factory=dict)
    suites: dict[str, dict] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict, base_cfg: ClusterConfig | None = None) -> "Scenario":
        d = dict(d)
        if d.pop("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ScenarioError("unsupported scenario version")
        try:
            cfg = ClusterConfig.from_dict(d.pop("cluster")) if "cluster" in d else base_cfg
            faults = [Fault(**f) for f in d.pop("faults", None) or []]
        except (TypeError, ValueError) as e:
            raise ScenarioError(str(e)) from None
        checks = list(d.pop("checks", None) or ["converged", "leases"])
        bad = [c for c in checks if c not in RUN_CHECKS + SUITES]
        if bad:
            raise ScenarioError(f"unknown checks {bad}")
        wl = d.pop("workload", None)
        if wl is None and not any(c in SUITES for c in checks):
            raise ScenarioError("scenario has no workload")
        sc = cls(d.pop("name", "scenario"), int(d.pop("seed", 0)), wl or {}, cfg, faults, checks,
                 d.pop("expect", None) or {}, d.pop("suites", None) or {})
        if d:
            raise ScenarioError(f"unknown scenario keys {sorted(d)}")
        return sc

    @classmethod
    def load(cls, path: str | Path, base_cfg: ClusterConfig | None = None) -> "Scenario":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f) or {}, base_cfg)


def run(sc: Scenario) -> RunResult:
    if not sc.workload:
        raise ScenarioError("scenario has no workload to run")
    try:
        wl = build(sc.workload)
    except TypeError as e:
        raise ScenarioError(f"bad workload: {e}") from None
    return run_workload(wl, sc.cluster, sc.seed, sc.faults)


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""
    seconds: float = 0.0


@dataclass
class CheckReport:
    scenario: str
    results: list[CheckResult] = field(default_factory=list)
    run: RunResult | None = None

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)


def _setup_ops(sc: Scenario) -> list:
    wl = build(sc.workload)
    return [op for pid in sorted(wl.setup) for op in wl.setup[pid]]


def _expectations(sc: Scenario, res: RunResult) -> list[CheckResult]:
    out = []
    values = dict(res.metrics)
    values.update(steady_hops=res.steady_hops, steady_ops=res.steady_ops, hops_per_op=res.hops_per_op)
    for key, want in sc.expect.items():
        got = values.get(key)
        if got is None:
            out.append(CheckResult(f"expect:{key}", False, "no such metric"))
            continue
        if isinstance(want, dict):
            ok = ("min" not in want or got >= want["min"]) and ("max" not in want or got <= want["max"])
        else:
            ok = got == want
        out.append(CheckResult(f"expect:{key}", ok, f"{got} vs {want}"))
    return out


def _suite(name: str, params: dict, seed: int) -> CheckResult:
    if name == "prefix":
        rep = crashcheck.check_prefix(max_points=params.get("max_points"), rejoin_every=params.get("rejoin_every", 0))
        return CheckResult(name, rep.ok and rep.cut_points > 0,
                           f"{rep.cut_points} cut points, {len(rep.violations)} violations")
    if name == "digest":
        rep = idempotence.check_digest_idempotence(seed=params.get("seed", 11), ops=params.get("ops", 30))
        return CheckResult(name, rep.ok, f"{rep.cut_points} cut points, {len(rep.mismatches)} mismatches")
    if name == "rejoin":
        rep = rejoin.rejoin_trials(params.get("trials", 100), seed)
        return CheckResult(name, rep.ok, f"{rep.trials} trials, {rep.stale_reads} stale reads, "
                                         f"{len(rep.not_exact)} inexact invalidations")
    procs, ops = params.get("procs", 2), params.get("ops", 3)
    step = params.get("step_level", True)
    limit = params.get("limit", 1000)
    progs = schedules.make_programs(procs, ops, seed)
    bad = total = 0
    for s in schedules.schedules_for(progs, step, limit, random.Random(seed)):
        r = schedules.run_schedule(progs, s, step_level=step, seed=seed)
        total += 1
        if not linearize.check(r.history, schedules.SETUP, witness=False).ok:
            bad += 1
    return CheckResult(name, bad == 0 and total > 0, f"{total} schedules, {bad} not linearizable")


def check(sc: Scenario) -> CheckReport:
    rep = CheckReport(sc.name)
    if sc.workload:
        t = time.perf_counter()
        res = run(sc)
        rep.run = res
        ran = time.perf_counter() - t
        for c in sc.checks:
            t = time.perf_counter()
            if c == "converged":
                hashes = {s: res.sim.replica_hashes(s) for s in res.sim.cm.chains}
                split = {s: h for s, h in hashes.items() if len(set(h.values())) > 1}
                r = CheckResult(c, not split, f"diverged: {sorted(split)}" if split else f"{len(hashes)} chains agree")
            elif c == "leases":
                v = res.sim.audit_violations
                r = CheckResult(c, not v and res.sim.audits > 0, f"{res.sim.audits} audits, {len(v)} overlaps")
            elif c == "linearizable":
                if sc.faults:
                    r = CheckResult(c, True, "skipped: faults injected (see prefix check)")
                else:
                    try:
                        v = linearize.check(res.history, _setup_ops(sc), bound=200_000)
                        r = CheckResult(c, v.ok, v.explain())
                    except SearchBoundExceeded as e:
                        r = CheckResult(c, False, f"search bound exceeded: {e}")
            elif c == "determinism":
                again = run(sc)
                same = again.trace_hash == res.trace_hash and again.history.dumps() == res.history.dumps()
                r = CheckResult(c, same, res.trace_hash[:16])
            elif c == "conservation":
                # bytes shipped to replicas cover everything acknowledged as durable there
                durable = sum(k.stats["acked_bytes"] for k in res.sim.kernfs.values())
                shipped = res.sim.net.bytes_by_tag["SEGMENT_WRITE"]
                r = CheckResult(c, shipped >= durable, f"replicated {shipped} >= acked {durable}")
            else:
                r = _suite(c, sc.suites.get(c, {}), sc.seed)
            r.seconds = time.perf_counter() - t + (ran if c == sc.checks[0] else 0.0)
            rep.results.append(r)
        rep.results += _expectations(sc, res)
    else:
        for c in sc.checks:
            t = time.perf_counter()
            r = _suite(c, sc.suites.get(c, {}), sc.seed)
            r.seconds = time.perf_counter() - t
            rep.results.append(r)
    return rep
