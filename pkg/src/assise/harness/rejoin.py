"""Randomised rejoin trials: write while a replica is down, bring it back, read everything.

The harness keeps its own ledger of which inodes every successful mutation
touched, and at which epoch it ran (every writer evicts after each
operation, so an operation is digested in the epoch it ran in). From that it
predicts two sets independently of the epoch bitmaps:

- ``down``: inodes written while the victim was down;
- ``tracked``: inodes written in any epoch from the victim's failure epoch on,
  which is exactly what whole-inode epoch tracking should invalidate.

The rejoining node's invalidation set must contain ``down`` and equal
``tracked``. Afterwards a reader on the rejoined node reads every file and
directory; any answer that differs from the sequential model is a stale read.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..cluster import Cluster
from ..config import ClusterConfig
from ..posix import PosixModel, parent

NODES = ["n0", "n1", "n2"]
VICTIM = "n2"


@dataclass
class TrialResult:
    seed: int
    invalidated: set[int]
    down: set[int]
    tracked: set[int]
    stale_reads: int
    reads: int
    converged: bool
    detail: list[str] = field(default_factory=list)
    trace_hash: str = ""

    @property
    def superset(self) -> bool:
        return self.invalidated >= self.down

    @property
    def exact(self) -> bool:
        return self.invalidated == self.tracked

    @property
    def ok(self) -> bool:
        return self.superset and self.exact and self.stale_reads == 0 and self.converged


class _Ledger:
    def __init__(self, sim: Cluster):
        self.sim = sim
        self.model = PosixModel()
        self.written: list[tuple[int, set[int]]] = []  # (epoch, inodes)

    def ino(self, path: str) -> int | None:
        return self.sim.kernfs["n0"].lookup_path(path)

    def run(self, pid: str, op: str, *args) -> tuple[str, object]:
        sim = self.sim
        before: set[int | None] = set()
        after: list[str] = []
        if op in ("write", "truncate"):
            before = {self.ino(args[0])}
        elif op in ("create", "mkdir"):
            before = {self.ino(parent(args[0]))}
            after = [args[0]]
        elif op == "unlink":
            before = {self.ino(args[0]), self.ino(parent(args[0]))}
        elif op == "rename":
            s, d = args
            before = {self.ino(s), self.ino(parent(s)), self.ino(parent(d))}
            if self.ino(d) != self.ino(s):
                before.add(self.ino(d))
        res = sim.apply(pid, op, *args)
        want = self.model.apply(op, *args)
        if res != want:
            raise AssertionError(f"{pid} {op}{args}: {res} but the model says {want}")
        sim.call(pid, "evict")
        if res[0] == "ok" and op in ("write", "truncate", "create", "mkdir", "unlink", "rename"):
            inos = {i for i in before if i is not None} | {i for p in after if (i := self.ino(p)) is not None}
            self.written.append((sim.cm.epoch, inos))
        return res

    def since(self, epoch: int) -> set[int]:
        out: set[int] = set()
        for e, inos in self.written:
            if e >= epoch:
                out |= inos
        return out


def _random_op(rng: random.Random, files: list[str], dirs: list[str], k: int) -> tuple[str, tuple]:
    f = rng.choice(files)
    r = rng.random()
    if r < 0.4:
        return "write", (f, rng.choice([0, 100, 4096, 9000]), bytes([k % 251]) * rng.choice([10, 3000, 5000]))
    if r < 0.55:
        return "truncate", (f, rng.choice([0, 50, 5000]))
    if r < 0.7:
        return "create", (f,)
    if r < 0.8:
        return "unlink", (f,)
    if r < 0.92:
        g = rng.choice([x for x in files if x != f])
        return "rename", (f, g)
    return "mkdir", (f"{rng.choice(dirs)}/d{k}",)


def rejoin_trial(seed: int, downtime_ops: int = 8, mode: str = "pessimistic") -> TrialResult:
    rng = random.Random(seed)
    sim = Cluster(ClusterConfig(nodes=list(NODES), mode=mode), seed=seed)
    led = _Ledger(sim)
    for i, n in enumerate(NODES):
        sim.spawn(n, pid=f"w{i}")
    dirs = ["/a", "/b"]
    files = [f"{d}/f{j}" for d in dirs for j in range(4)]
    for d in dirs:
        led.run("w0", "mkdir", d)
    for j, f in enumerate(files):
        led.run(f"w{j % 3}", "create", f)
        led.run(f"w{j % 3}", "write", f, 0, bytes([j]) * rng.choice([100, 5000]))
    if rng.random() < 0.5:
        # an earlier, unrelated outage moves the epoch on, so older writes fall out of tracking
        sim.crash_node("n1")
        sim.advance(2 * sim.cfg.timeouts.heartbeat_interval + 1)
        sim.restart_node("n1")
        sim.spawn("n1", pid="w1b")
        led.run("w0", "write", files[0], 0, b"between outages")
    writers = [p for p in ("w0", "w1b" if "w1b" in sim.procs else "w1") if sim.procs[p].alive]
    for k in range(rng.randrange(0, 3)):
        op, args = _random_op(rng, files, dirs, 100 + k)
        led.run(rng.choice(writers), op, *args)
    sim.quiesce()
    sim.crash_node(VICTIM)
    sim.advance(2 * sim.cfg.timeouts.heartbeat_interval + 1)
    fail_epoch = sim.cm.fail_epoch[VICTIM]
    mark = len(led.written)
    for k in range(downtime_ops):
        op, args = _random_op(rng, files, dirs, k)
        led.run(rng.choice(writers), op, *args)
    down: set[int] = set()
    for _, inos in led.written[mark:]:
        down |= inos
    tracked = led.since(fail_epoch)
    sim.quiesce()
    rep = sim.restart_node(VICTIM)
    invalidated = set(rep.invalidated_inodes)
    # read everything back on the rejoined node
    r = sim.spawn(VICTIM, pid="reader")
    stale = reads = 0
    detail = []
    for d in sorted(led.model.dirs):
        reads += 1
        got = sim.apply(r.pid, "readdir", d)
        if got != led.model.apply("readdir", d):
            stale += 1
            detail.append(f"readdir {d}: {got}")
    for f in sorted(led.model.files):
        reads += 1
        want = led.model.apply("read", f, 0, 1 << 20)
        got = sim.apply(r.pid, "read", f, 0, 1 << 20)
        if got != want:
            stale += 1
            detail.append(f"read {f}: {len(got[1]) if got[0] == 'ok' else got}")
    sim.quiesce()
    return TrialResult(seed, invalidated, down, tracked, stale, reads, sim.converged(), detail, sim.net.trace_hash())


@dataclass
class RejoinReport:
    trials: int = 0
    stale_reads: int = 0
    reads: int = 0
    not_superset: list[int] = field(default_factory=list)
    not_exact: list[int] = field(default_factory=list)
    not_converged: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.stale_reads or self.not_superset or self.not_exact or self.not_converged)


def rejoin_trials(n: int = 100, seed: int = 0, downtime_ops: int = 8) -> RejoinReport:
    rep = RejoinReport()
    for i in range(n):
        t = rejoin_trial(seed * 100_003 + i, downtime_ops, "pessimistic" if i % 2 == 0 else "optimistic")
        rep.trials += 1
        rep.stale_reads += t.stale_reads
        rep.reads += t.reads
        if not t.superset:
            rep.not_superset.append(t.seed)
        if not t.exact:
            rep.not_exact.append(t.seed)
        if not t.converged:
            rep.not_converged.append(t.seed)
    return rep
