"""Drive a workload through a simulated cluster, with optional injected faults.

The driver is round-robin: one operation per live process per round, in pid
order, so a run is a pure function of (workload, config, seed, faults).
"""
from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from ..cluster import Cluster
from ..config import ChainSpec, ClusterConfig
from ..errors import FsError, NodeCrashed, ProcessCrashed
from ..posix import MUTATING
from .crashcheck import CUTS
from .history import History
from .workloads import Workload

FAULT_KINDS = ("crash-node", "crash-process", "restart-node")


@dataclass
class Fault:
    at: int  # global operation index (0-based) before which the fault fires
    kind: str
    target: str
    cut: str = "none"
    restart_on: str | None = None  # respawn the victim's processes here after fail-over

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if self.cut not in CUTS:
            raise ValueError(f"unknown cut strategy {self.cut!r}")


@dataclass
class RunResult:
    workload: str
    sim: Cluster
    history: History
    trace_hash: str
    steady_hops: int = 0
    steady_ops: int = 0
    metrics: dict[str, Any] = field(default_factory=dict)
    faults_fired: list[str] = field(default_factory=list)
    op_hops: list[tuple[str, int]] = field(default_factory=list)  # steady-state ops only

    @property
    def hops_per_op(self) -> float:
        return self.steady_hops / self.steady_ops if self.steady_ops else 0.0


def make_config(wl: Workload, base: ClusterConfig | None = None) -> ClusterConfig:
    if base is None:
        nodes = wl.nodes or sorted(set(wl.placement.values()))
        cfg = ClusterConfig(nodes=list(nodes))
    else:
        cfg = base.copy()
    for k, v in wl.cfg.items():
        setattr(cfg, k, v)
    if cfg.single_manager and cfg.single_manager in cfg.chains["/"].replicas and base is None:
        rest = [n for n in cfg.nodes if n != cfg.single_manager]
        cfg.chains = {"/": ChainSpec("/", rest)}
    missing = set(wl.placement.values()) - set(cfg.nodes)
    if missing:
        raise ValueError(f"workload places processes on unknown nodes {sorted(missing)}")
    return cfg


def latency_summary(h: History) -> dict[str, dict[str, float]]:
    by: dict[str, list[int]] = {}
    for e in h.events:
        if not e.pending and e.t_response is not None:
            by.setdefault(e.op, []).append(e.t_response - e.t_invoke)
    out = {}
    for op, xs in sorted(by.items()):
        xs.sort()
        out[op] = {"n": len(xs), "p50_ns": statistics.median(xs), "p99_ns": xs[min(len(xs) - 1, int(len(xs) * 0.99))],
                   "mean_ns": statistics.fmean(xs)}
    return out


class Driver:
    def __init__(self, wl: Workload, cfg: ClusterConfig | None = None, seed: int = 0,
                 faults: list[Fault] | tuple = ()):
        self.wl = wl
        self.cfg = make_config(wl, cfg)
        self.sim = Cluster(self.cfg, seed=seed)
        self.faults = sorted(faults, key=lambda f: f.at)
        self.history = History()
        self.pc: dict[str, int] = {}
        self.alias: dict[str, str] = {}  # program owner -> process currently running it
        self.fired: list[str] = []
        self.step = 0
        self.op_hops: list[tuple[str, int]] = []  # (op, lease hops it caused), one per step

    def setup(self) -> None:
        sim = self.sim
        for pid in sorted(self.wl.placement):
            sim.spawn(self.wl.placement[pid], pid=pid)
            self.alias[pid] = pid
            self.pc[pid] = 0
        for pid in sorted(self.wl.setup):
            for op, args in self.wl.setup[pid]:
                sim.call(pid, op, *args)

    def _fire(self, f: Fault) -> None:
        sim = self.sim
        dt = 2 * self.cfg.timeouts.heartbeat_interval + 1
        if f.kind == "crash-node":
            owners = [o for o, p in self.alias.items() if sim.procs[p].node == f.target and sim.procs[p].alive]
            sim.crash_node(f.target, CUTS[f.cut])
            sim.advance(dt)
            if f.restart_on:
                for o in owners:
                    self._respawn(o, f.restart_on)
        elif f.kind == "crash-process":
            owner = f.target
            victim = self.alias[owner]
            node = sim.procs[victim].node
            sim.crash_process(victim, restart=bool(f.restart_on))
            if f.restart_on:
                self._respawn(owner, f.restart_on if f.restart_on != "same" else node)
        else:
            if not sim.net.node_up(f.target):
                sim.restart_node(f.target)
        self.fired.append(f"{f.kind}:{f.target}@{f.at}")

    def _respawn(self, owner: str, node: str) -> None:
        old = self.alias[owner]
        new = f"{owner}.{sum(1 for p in self.sim.procs if p.startswith(owner + '.')) + 1}"
        self.sim.spawn(node, pid=new, restart_of=old)
        self.alias[owner] = new

    def _one(self, owner: str) -> None:
        sim = self.sim
        pid = self.alias[owner]
        op, args = self.wl.programs[owner][self.pc[owner]]
        self.pc[owner] += 1
        ev = self.history.invoke(pid, op, args, sim.clock.now)
        h0 = sim.lease_hops()
        try:
            res = ("ok", sim.call(pid, op, *args))
        except FsError as e:
            res = ("err", e.errno.value)
        except (NodeCrashed, ProcessCrashed):
            return  # the event stays pending
        finally:
            self.op_hops.append((op, sim.lease_hops() - h0))
        self.history.respond(ev, res, sim.clock.now)

    def run_group(self, owners: list[str], on_warm=None) -> None:
        rounds = 0
        while True:
            live = [o for o in owners if self.pc[o] < len(self.wl.programs[o])
                    and self.sim.procs[self.alias[o]].alive]
            if not live:
                return
            if rounds == self.wl.warmup and on_warm:
                on_warm()
                on_warm = None
            for o in live:
                while self.faults and self.faults[0].at <= self.step:
                    self._fire(self.faults.pop(0))
                if not self.sim.procs[self.alias[o]].alive or self.pc[o] >= len(self.wl.programs[o]):
                    continue
                self._one(o)
                self.step += 1
            rounds += 1

    def run(self) -> RunResult:
        sim = self.sim
        self.setup()
        warm = {"hops": sim.lease_hops(), "step": 0}

        def mark() -> None:
            warm["hops"] = sim.lease_hops()
            warm["step"] = self.step

        for i, group in enumerate(self.wl.phase_groups()):
            self.run_group(group, mark if i == 0 else None)
        while self.faults:
            self._fire(self.faults.pop(0))
        steady_hops = sim.lease_hops() - warm["hops"]
        steady_ops = self.step - warm["step"]
        for n in self.cfg.nodes:
            if not sim.net.node_up(n) and sim.cm.status[n] == "ALIVE":
                sim.advance(2 * self.cfg.timeouts.heartbeat_interval + 1)
        sim.quiesce()
        return RunResult(self.wl.name, sim, self.history, sim.net.trace_hash(), steady_hops, steady_ops,
                         collect_metrics(sim, self.history), self.fired, self.op_hops[warm["step"]:])


def collect_metrics(sim: Cluster, h: History) -> dict[str, Any]:
    m: dict[str, Any] = dict(sorted(sim.metrics.items()))
    m["sim_time_ns"] = sim.clock.now
    m["ops"] = len(h.events)
    m["mutations"] = sum(1 for e in h.events if e.op in MUTATING)
    m["lease_hops"] = sim.lease_hops()
    m["remote_messages"] = sum(sim.net.remote_messages.values())
    m["messages"] = dict(sorted(sim.net.messages.items()))
    kstats: Counter = Counter()
    for k in sim.kernfs.values():
        kstats.update(k.stats)
    m["kernfs"] = dict(sorted(kstats.items()))
    reads: Counter = Counter()
    for p in sim.procs.values():
        reads.update({k[5:]: v for k, v in p.stats.items() if k.startswith("read_")})
    m["read_provenance"] = dict(sorted(reads.items()))
    m["latency"] = latency_summary(h)
    m["epoch"] = sim.cm.epoch
    m["manager_migrations"] = sum(1 for e in sim.cm.events if e[0] == "migrate")
    m["audits"] = sim.audits
    m["audit_violations"] = len(sim.audit_violations)
    return m


def run_workload(wl: Workload, cfg: ClusterConfig | None = None, seed: int = 0,
                 faults: list[Fault] | tuple = ()) -> RunResult:
    return Driver(wl, cfg, seed, faults).run()
