"""Crash cut-point enumeration and the recovered-prefix check.

A crash case is a small deterministic workload: every process works in its
own top-level directory and periodically syncs. A dry run counts the durable
writes that hit the victim; the case is then replayed once per (write index,
cut strategy) pair with the crash armed at that write. After recovery, each
process's directory on every surviving replica must equal the sequential
model's replay of an admissible prefix of that process's operations.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Iterator

from ..cluster import Cluster
from ..config import ChainSpec, ClusterConfig
from ..errors import NodeCrashed
from ..posix import MUTATING, PosixModel
from ..replication import mode_semantics

Op = tuple[str, tuple]

CUTS: dict[str, Any] = {
    "none": None,  # every in-flight write is lost
    "all": "all",  # every issued write made it
    "half": lambda region, pending: pending // 2,  # each region keeps the older half
}


def private_program(rng: random.Random, root: str, n: int, sync_op: str, sync_every: int) -> list[Op]:
    names = [f"{root}/f{i}" for i in range(3)]
    out: list[Op] = []
    k = 0
    while len([o for o in out if o[0] != sync_op]) < n:
        pick = rng.random()
        a = rng.choice(names)
        if pick < 0.25:
            out.append(("create", (a,)))
        elif pick < 0.6:
            size = rng.choice([3, 64, 700, 5000, 9000])
            data = bytes([(k * 37 + j) % 251 for j in range(size)])
            out.append(("write", (a, rng.choice([0, 10, 4090]), data)))
        elif pick < 0.7:
            out.append(("truncate", (a, rng.choice([0, 5, 6000]))))
        elif pick < 0.8:
            out.append(("rename", (a, rng.choice(names))))
        elif pick < 0.9:
            out.append(("unlink", (a,)))
        else:
            out.append(("mkdir", (f"{root}/d{k % 2}",)))
        k += 1
        if k % sync_every == 0:
            out.append((sync_op, ()))
    return out


@dataclass
class CrashCase:
    name: str
    nodes: int = 3
    mode: str = "pessimistic"
    placement: tuple[int, ...] = (0, 1, 2)  # node index per process
    ops: int = 12
    sync_every: int = 4
    seed: int = 0
    failure: str = "node"  # node | process
    victim: int = 0  # node index, or process index for process failures
    rejoin: bool = False

    def programs(self) -> dict[str, list[Op]]:
        rng = random.Random(self.seed)
        sync = "fsync" if self.mode == "pessimistic" else "dsync"
        return {f"p{i}": private_program(rng, f"/p{i}", self.ops, sync, self.sync_every)
                for i in range(len(self.placement))}


@dataclass
class CutResult:
    case: str
    write_index: int
    cut: str
    ok: bool
    detail: str = ""
    prefixes: dict[str, int] = field(default_factory=dict)


@dataclass
class PrefixReport:
    cut_points: int = 0
    violations: list[CutResult] = field(default_factory=list)
    per_case: dict[str, int] = field(default_factory=dict)
    converged_after_rejoin: int = 0
    rejoins: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def _cluster(case: CrashCase) -> tuple[Cluster, list[str]]:
    names = [f"n{i}" for i in range(case.nodes)]
    cfg = ClusterConfig(nodes=names, chains={"/": ChainSpec("/", names)}, mode=case.mode)
    sim = Cluster(cfg, seed=case.seed)
    pids = []
    for i, ni in enumerate(case.placement):
        p = sim.spawn(names[ni], pid=f"p{i}")
        pids.append(p.pid)
        sim.call(p.pid, "mkdir", f"/p{i}")
        sim.call(p.pid, "fsync" if case.mode == "pessimistic" else "dsync")
    return sim, pids


def _drive(sim: Cluster, programs: dict[str, list[Op]], on_crash) -> None:
    """Round-robin one op per live process until all programs are done."""
    pcs = {pid: 0 for pid in programs}
    while True:
        progressed = False
        for pid in sorted(programs):
            p = sim.procs[pid]
            if not p.alive or pcs[pid] >= len(programs[pid]):
                continue
            op, args = programs[pid][pcs[pid]]
            pcs[pid] += 1
            progressed = True
            try:
                sim.apply(pid, op, *args)
            except NodeCrashed as e:
                on_crash(pid, e, op)
        if not progressed:
            return


def _model_prefix(prog: list[Op], k: int, root: str) -> dict:
    m = PosixModel()
    m.apply("mkdir", root)
    done = 0
    for op, args in prog:
        if done >= k:
            break
        if op in MUTATING:
            m.apply(op, *args)
            done += 1
    return m.tree(root)


def count_writes(case: CrashCase) -> int:
    sim, pids = _cluster(case)
    if case.failure == "node":
        before = sim.media.write_count.get(f"n{case.victim}", 0)
        _drive(sim, case.programs(), lambda pid, e, op: None)
        return sim.media.write_count.get(f"n{case.victim}", 0) - before
    rid = _log_rid(sim, case)
    seen = [0]
    orig = sim.media.write_persistent

    def counting(r, *a, **kw):
        if r == rid:
            seen[0] += 1
        return orig(r, *a, **kw)

    sim.media.write_persistent = counting
    _drive(sim, case.programs(), lambda pid, e, op: None)
    return seen[0]


def _log_rid(sim: Cluster, case: CrashCase) -> str:
    node = f"n{case.placement[case.victim]}"
    ci = sorted(sim.cfg.chains).index("/")
    return f"{node}:log:p{case.victim}:{ci}"


def run_cut(case: CrashCase, write_index: int, cut_name: str) -> CutResult:
    sim, pids = _cluster(case)
    programs = case.programs()
    crashed: dict[str, Any] = {}
    if case.failure == "node":
        victim = f"n{case.victim}"
        sim.media.arm_crash(victim, write_index, CUTS[cut_name])

        def on_crash(pid: str, e: NodeCrashed, op: str) -> None:
            crashed["node"] = e.node
            # detection and fail-over happen on the heartbeat
            sim.advance(2 * sim.cfg.timeouts.heartbeat_interval + 1)
    else:
        victim = f"n{case.placement[case.victim]}"
        vpid = f"p{case.victim}"
        sim.media.crash_handler = lambda node, cut: None
        sim.media.arm_crash(victim, write_index, None, region=_log_rid(sim, case))

        def on_crash(pid: str, e: NodeCrashed, op: str) -> None:
            sim.media.crash_handler = sim._crash_handler
            if pid != vpid:
                raise RuntimeError(f"process-crash hook fired in {pid}")
            crashed["pid"] = pid
            crashed["inflight"] = op
            sim.crash_process(pid)

    _drive(sim, programs, on_crash)
    sim.media.disarm()
    sim.media.crash_handler = sim._crash_handler
    if case.failure == "node" and "node" not in crashed and not sim.net.node_up(victim):
        sim.advance(2 * sim.cfg.timeouts.heartbeat_interval + 1)
    sim.quiesce()
    res = CutResult(case.name, write_index, cut_name, True)
    problems = []
    for pid in sorted(programs):
        p = sim.procs[pid]
        root = f"/{pid}"
        dead_node = case.failure == "node" and not sim.net.node_up(p.node)
        if dead_node:
            allowed = mode_semantics(case.mode, p.completed, p.commit_points, p.acked_points, "node")
        else:
            allowed = mode_semantics(case.mode, p.completed, p.commit_points, p.acked_points, "process")
            if crashed.get("pid") == pid and crashed.get("inflight") in MUTATING:
                # the interrupted operation is all there or not there at all
                allowed = allowed | {p.completed + 1}
        base = 1  # the setup mkdir of the process's own directory
        allowed = {k - base for k in allowed if k >= base}
        want = {k: _model_prefix(programs[pid], k, root) for k in sorted(allowed)}
        for n in sim.active_chain("/"):
            got = sim.kernfs[n].tree(root)
            match = [k for k, t in want.items() if t == got]
            if not match:
                problems.append(f"{pid}@{n}: state matches none of prefixes {sorted(allowed)}")
            else:
                res.prefixes[pid] = match[-1]
    if problems:
        res.ok = False
        res.detail = "; ".join(problems)
    return res


def rejoin_check(case: CrashCase, write_index: int, cut_name: str) -> bool:
    """Crash, recover, restart the victim, quiesce: do all replicas agree?"""
    sim, pids = _cluster(case)
    victim = f"n{case.victim}"
    sim.media.arm_crash(victim, write_index, CUTS[cut_name])
    _drive(sim, case.programs(), lambda pid, e, op: sim.advance(2 * sim.cfg.timeouts.heartbeat_interval + 1))
    sim.media.disarm()
    if not sim.net.node_up(victim):
        sim.advance(2 * sim.cfg.timeouts.heartbeat_interval + 1)
        sim.quiesce()
        sim.restart_node(victim)
    sim.quiesce()
    return sim.converged() and len(sim.active_chain("/")) == case.nodes


def cut_points(case: CrashCase, cuts: tuple[str, ...] = ("none", "all", "half")) -> Iterator[tuple[int, str]]:
    n = count_writes(case)
    for i in range(1, n + 1):
        for c in cuts if case.failure == "node" else ("none",):
            yield i, c


DEFAULT_CASES = [
    CrashCase("pess-2r-2p", nodes=2, mode="pessimistic", placement=(0, 1), ops=24, seed=1),
    CrashCase("opt-2r-3p", nodes=2, mode="optimistic", placement=(0, 0, 1), ops=16, seed=2),
    CrashCase("pess-3r-3p", nodes=3, mode="pessimistic", placement=(0, 1, 2), ops=16, seed=3),
    CrashCase("opt-3r-4p", nodes=3, mode="optimistic", placement=(0, 1, 2, 0), ops=16, seed=4),
    CrashCase("pess-3r-4p", nodes=3, mode="pessimistic", placement=(0, 0, 1, 2), ops=12, seed=7, sync_every=3),
    CrashCase("opt-2r-2p", nodes=2, mode="optimistic", placement=(0, 1), ops=24, seed=8, sync_every=6),
    CrashCase("pess-proc", nodes=2, mode="pessimistic", placement=(0, 1), ops=20, seed=5, failure="process"),
    CrashCase("opt-proc", nodes=3, mode="optimistic", placement=(0, 1, 0), ops=20, seed=6, failure="process"),
]


def check_prefix(cases: list[CrashCase] | None = None, rejoin_every: int = 0,
                 max_points: int | None = None) -> PrefixReport:
    rep = PrefixReport()
    for case in cases or DEFAULT_CASES:
        n = 0
        for i, cut in cut_points(case):
            if max_points is not None and n >= max_points:
                break
            r = run_cut(case, i, cut)
            n += 1
            rep.cut_points += 1
            if not r.ok:
                rep.violations.append(r)
            if rejoin_every and case.failure == "node" and i % rejoin_every == 0 and cut == "half":
                rep.rejoins += 1
                rep.converged_after_rejoin += int(rejoin_check(case, i, cut))
        rep.per_case[case.name] = n
    return rep
