"""Interleaving control: run several processes' operations in a chosen order.

Two granularities are supported. At *op level* each schedule slot runs one
whole operation. At *step level* an operation is two slots: acquiring (and
pinning) its leases, then executing it. A process whose acquisition is
refused because another process has the lease pinned stays blocked; its
slot is deferred until the holder's next step has run. That produces
overlapping invocation intervals in the history, which op-level runs never
do.
"""
from __future__ import annotations

import itertools
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator

from ..cluster import Cluster
from ..config import ChainSpec, ClusterConfig
from ..errors import FsError, LeaseBusy
from .history import Event, History

Op = tuple[str, tuple]


def multiset_permutations(counts: dict[str, int]) -> Iterator[tuple[str, ...]]:
    """Every distinct arrangement of ``counts[k]`` copies of each key, in lexicographic order."""
    keys = sorted(k for k, v in counts.items() if v > 0)
    left = dict(counts)
    total = sum(left.values())
    out: list[str] = []

    def go() -> Iterator[tuple[str, ...]]:
        if len(out) == total:
            yield tuple(out)
            return
        for k in keys:
            if left[k]:
                left[k] -= 1
                out.append(k)
                yield from go()
                out.pop()
                left[k] += 1

    yield from go()


def count_permutations(counts: dict[str, int]) -> int:
    from math import factorial

    n = factorial(sum(counts.values()))
    for v in counts.values():
        n //= factorial(v)
    return n


def random_schedule(counts: dict[str, int], rng: random.Random) -> tuple[str, ...]:
    slots = [k for k in sorted(counts) for _ in range(counts[k])]
    rng.shuffle(slots)
    return tuple(slots)


# -- contention workloads ------------------------------------------------------------------------

SETUP: list[Op] = [
    ("mkdir", ("/d",)),
    ("mkdir", ("/e",)),
    ("create", ("/d/f",)),
    ("write", ("/d/f", 0, b"init")),
]


# one writer on a replica, one reader without a copy: every read after a write must see it
CACHED_READER: dict[str, list[Op]] = {
    "p0": [("write", ("/d/f", 0, b"A0")), ("truncate", ("/d/f", 2)), ("write", ("/d/f", 1, b"A2"))],
    "p1": [("read", ("/d/f", 0, 8)), ("read", ("/d/f", 0, 8)), ("read", ("/d/f", 0, 8))],
}


def contention_ops(rng: random.Random, pid_tag: str, n: int) -> list[Op]:
    """Random operations on a handful of shared names, tagged so written bytes are unique."""
    out: list[Op] = []
    for k in range(n):
        data = f"{pid_tag}{k}".encode()
        choice = rng.choice(["write", "write", "read", "read", "create", "unlink", "rename", "stat",
                             "readdir", "truncate", "mkdir"])
        name = rng.choice(["/d/g", "/e/g", "/d/f"])
        if choice == "write":
            out.append(("write", (rng.choice(["/d/f", "/d/g"]), rng.choice([0, 1, 3]), data)))
        elif choice == "read":
            out.append(("read", (rng.choice(["/d/f", "/d/g", "/e/g"]), 0, 8)))
        elif choice == "create":
            out.append(("create", (rng.choice(["/d/g", "/e/g"]),)))
        elif choice == "unlink":
            out.append(("unlink", (name,)))
        elif choice == "rename":
            src, dst = rng.sample(["/d/g", "/e/g", "/d/f"], 2)
            out.append(("rename", (src, dst)))
        elif choice == "stat":
            out.append(("stat", (name,)))
        elif choice == "readdir":
            out.append(("readdir", (rng.choice(["/d", "/e"]),)))
        elif choice == "truncate":
            out.append(("truncate", ("/d/f", rng.choice([0, 2, 6]))))
        else:
            out.append(("mkdir", ("/e/x",)))
    return out


@dataclass
class ScheduleRun:
    schedule: tuple[str, ...]
    history: History
    trace_hash: str
    deferrals: int = 0
    busy: Counter = field(default_factory=Counter)


class Interleaver:
    """Drives processes of one cluster through a schedule, recording a history."""

    def __init__(self, sim: Cluster, programs: dict[str, list[Op]], step_level: bool = True):
        self.sim = sim
        self.programs = programs
        self.step_level = step_level
        self.history = History()
        self.pc = {pid: 0 for pid in programs}
        self.open: dict[str, tuple[Event, object | None]] = {}
        self.deferrals = 0

    def _result(self, fn) -> tuple[str, object]:
        try:
            return "ok", fn()
        except FsError as e:
            return "err", e.errno.value

    def step(self, pid: str) -> bool:
        """Advance ``pid`` by one slot; False if it is blocked on a pinned lease."""
        sim = self.sim
        p = sim.procs[pid]
        if self.pc[pid] >= len(self.programs[pid]):
            return True
        sim.clock.run_due()
        op, args = self.programs[pid][self.pc[pid]]
        if pid not in self.open:
            ev = self.history.invoke(pid, op, args, sim.clock.now)
            self.open[pid] = (ev, None)
        ev, prep = self.open[pid]
        if prep is None:
            try:
                prep = p.prepare(op, *args)
            except LeaseBusy:
                return False
            except FsError as e:
                self._finish(pid, ev, ("err", e.errno.value))
                return True
            self.open[pid] = (ev, prep)
            if self.step_level:
                return True
        self._finish(pid, ev, self._result(lambda: p.execute(prep)))
        return True

    def _finish(self, pid: str, ev: Event, result) -> None:
        self.history.respond(ev, result, self.sim.clock.now)
        del self.open[pid]
        self.pc[pid] += 1

    def run(self, schedule: tuple[str, ...]) -> None:
        blocked: list[str] = []
        for pid in schedule:
            if not self.step(pid):
                blocked.append(pid)
                self.deferrals += 1
                continue
            still = []
            for b in blocked:
                if not self.step(b):
                    still.append(b)
            blocked = still
        # drain: operations holding pinned leases finish first, then the deferred slots
        for _ in range(10_000):
            if not blocked and not self.open:
                return
            for pid in sorted(self.open):
                if self.open[pid][1] is not None:
                    self.step(pid)
            blocked = [b for b in blocked if not self.step(b)]
            for pid in sorted(self.open):
                while pid in self.open:
                    if not self.step(pid):
                        break
        raise RuntimeError(f"processes {sorted(set(blocked))} never unblocked")


def build_cluster(nodes: int, mode: str, placement: list[int], seed: int = 0,
                  replicas: int | None = None) -> tuple[Cluster, list[str]]:
    """``replicas`` < ``nodes`` leaves the last nodes without a copy, so their reads go remote and get cached."""
    names = [f"n{i}" for i in range(nodes)]
    chains = {"/": ChainSpec("/", names[:replicas])} if replicas else {}
    sim = Cluster(ClusterConfig(nodes=names, mode=mode, chains=chains), seed=seed)
    pids = []
    for i, ni in enumerate(placement):
        p = sim.spawn(names[ni], pid=f"p{i}")
        pids.append(p.pid)
    for op, args in SETUP:
        sim.call(pids[0], op, *args)
    sim.call(pids[0], "fsync")
    return sim, pids


def run_schedule(programs: dict[str, list[Op]], schedule: tuple[str, ...], *, nodes: int = 3, mode: str = "pessimistic",
                 placement: list[int] | None = None, step_level: bool = True, seed: int = 0,
                 replicas: int | None = None) -> ScheduleRun:
    pids = sorted(programs)
    placement = placement or [i % nodes for i in range(len(pids))]
    sim, made = build_cluster(nodes, mode, placement, seed, replicas)
    assert made == pids, (made, pids)
    il = Interleaver(sim, programs, step_level)
    il.run(schedule)
    sim.quiesce()
    return ScheduleRun(schedule, il.history, sim.net.trace_hash(), il.deferrals, Counter(sim.metrics))


def make_programs(procs: int, ops: int, seed: int) -> dict[str, list[Op]]:
    rng = random.Random(seed)
    return {f"p{i}": contention_ops(rng, "ABCDEFGH"[i], ops) for i in range(procs)}


def schedules_for(programs: dict[str, list[Op]], step_level: bool, limit: int | None = None,
                  rng: random.Random | None = None) -> Iterator[tuple[str, ...]]:
    """All schedules if there are at most ``limit`` of them, else ``limit`` seeded-random ones."""
    per = 2 if step_level else 1
    counts = {pid: per * len(ops) for pid, ops in programs.items()}
    total = count_permutations(counts)
    if limit is None or total <= limit:
        yield from multiset_permutations(counts)
        return
    rng = rng or random.Random(0)
    seen: set[tuple[str, ...]] = set()
    for _ in itertools.count():
        if len(seen) >= limit:
            return
        s = random_schedule(counts, rng)
        if s not in seen:
            seen.add(s)
            yield s


# -- sweeps --------------------------------------------------------------------------------------

@dataclass
class SweepConfig:
    procs: int
    ops: int
    step_level: bool
    limit: int | None = None  # None: every schedule
    replicas: int | None = None  # None: every node holds a copy
    programs: dict[str, list[Op]] | None = None  # fixed programs instead of seeded random ones

    def describe(self) -> str:
        grain = "step" if self.step_level else "op"
        where = f", {self.replicas} replica(s)" if self.replicas else ""
        return f"{self.procs}x{self.ops} {grain}-level{where}"


DEFAULT_SWEEP = [
    SweepConfig(2, 3, True),  # 924 schedules
    SweepConfig(2, 3, True, replicas=1, programs=CACHED_READER),  # 924: reads through a DRAM cache
    SweepConfig(3, 3, False),  # 1680 schedules
    SweepConfig(2, 5, False),  # 252 schedules
    SweepConfig(3, 5, True, limit=150),  # seeded sample of ~3e11
]


@dataclass
class SweepReport:
    histories: int = 0
    rejected: list[tuple[str, int, tuple[str, ...]]] = field(default_factory=list)
    exhaustive: dict[str, bool] = field(default_factory=dict)
    samples: list[tuple[History, list]] = field(default_factory=list)
    deferrals: int = 0

    @property
    def ok(self) -> bool:
        return self.histories > 0 and not self.rejected


def interleaving_sweep(configs: list[SweepConfig] | None = None, seeds: tuple[int, ...] = (2,),
                       modes: tuple[str, ...] = ("pessimistic", "optimistic"), keep_every: int = 40,
                       check=None) -> SweepReport:
    """Run every (or a seeded sample of) schedule and check each history."""
    from .linearize import check as default_check

    check = check or default_check
    rep = SweepReport()
    for cfg in configs or DEFAULT_SWEEP:
        for seed in seeds:
            for mode in modes:
                progs = cfg.programs or make_programs(cfg.procs, cfg.ops, seed)
                per = 2 if cfg.step_level else 1
                total = count_permutations({p: per * len(o) for p, o in progs.items()})
                rep.exhaustive[f"{cfg.describe()} seed={seed} {mode}"] = cfg.limit is None or total <= cfg.limit
                for s in schedules_for(progs, cfg.step_level, cfg.limit, random.Random(seed)):
                    r = run_schedule(progs, s, mode=mode, step_level=cfg.step_level, seed=seed,
                                     replicas=cfg.replicas)
                    rep.histories += 1
                    rep.deferrals += r.deferrals
                    if not check(r.history, SETUP, witness=False).ok:
                        rep.rejected.append((f"{cfg.describe()} {mode}", seed, s))
                    elif rep.histories % keep_every == 0:
                        rep.samples.append((r.history, SETUP))
    return rep
