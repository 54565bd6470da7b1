"""Workload generators shaped like the applications the system was built for.

Each generator returns a :class:`Workload`: where every process runs, what it
does once before measurement starts, and its operation program. Programs are
plain ``(op, args)`` lists in the path-based operation vocabulary, so any
driver can replay them and the sequential model can replay them too.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any

Op = tuple[str, tuple]

PATTERNS = ("private", "sharded", "rr", "single")


@dataclass
class Workload:
    name: str
    placement: dict[str, str]  # pid -> node
    setup: dict[str, list[Op]]
    programs: dict[str, list[Op]]
    warmup: int = 0  # leading ops per process excluded from steady-state metrics
    cfg: dict[str, Any] = field(default_factory=dict)  # ClusterConfig overrides
    nodes: list[str] = field(default_factory=list)
    phases: list[list[str]] = field(default_factory=list)  # groups run to completion in order

    def phase_groups(self) -> list[list[str]]:
        if not self.phases:
            return [sorted(self.programs)]
        rest = sorted(set(self.programs) - {p for g in self.phases for p in g})
        return [sorted(g) for g in self.phases] + ([rest] if rest else [])

    @property
    def total_ops(self) -> int:
        return sum(len(p) for p in self.programs.values())


def _body(rng: random.Random, n: int) -> bytes:
    return rng.randbytes(n)


# -- mail delivery ---------------------------------------------------------------------

def maildir(pattern: str = "private", nodes: int = 3, mailboxes: int = 2, deliveries: int = 40,
            body: int = 2048, spill: float = 0.1, seed: int = 0, mode: str = "pessimistic",
            sync_every: int = 1, index: bool = False, delete_frac: float = 0.0,
            warmup_deliveries: int = 6) -> Workload:
    """One delivery process per node writing mail as a queue file, then renaming it in.

    ``pattern`` picks which mailboxes a process delivers to:

    - private: only the mailboxes homed on its own node
    - sharded: its own mailboxes, except a ``spill`` fraction that go anywhere
    - rr: mail is dealt out round-robin, so the recipient is any mailbox
    - single: like private, but one extra node with no processes manages every lease
    """
    if pattern not in PATTERNS:
        raise ValueError(f"unknown delivery pattern {pattern!r}")
    rng = random.Random(seed)
    names = [f"n{i}" for i in range(nodes)]
    all_nodes = list(names)
    cfg: dict[str, Any] = {"mode": mode}
    if pattern == "single":
        all_nodes.append("mgr")
        cfg["single_manager"] = "mgr"
    sync = "fsync" if mode == "pessimistic" else "dsync"
    boxes = {n: [f"/mb{i * mailboxes + j}" for j in range(mailboxes)] for i, n in enumerate(names)}
    every = [b for n in names for b in boxes[n]]
    placement, setup, programs = {}, {}, {}
    per_op = 3 + int(index)
    for i, n in enumerate(names):
        pid = f"d{i}"
        placement[pid] = n
        q = f"/q{i}"
        setup[pid] = [("mkdir", (q,))] + [("mkdir", (b,)) for b in boxes[n]]
        if index:
            setup[pid].append(("create", (f"{q}/index",)))
        setup[pid].append((sync, ()))
        prog: list[Op] = []
        pending_delete: list[str] = []
        for k in range(deliveries):
            if pattern in ("private", "single"):
                box = rng.choice(boxes[n])
            elif pattern == "sharded":
                box = rng.choice(every) if rng.random() < spill else rng.choice(boxes[n])
            else:
                box = rng.choice(every)
            tmp, dst = f"{q}/t{k}", f"{box}/m{i}-{k}"
            prog += [("create", (tmp,)), ("write", (tmp, 0, _body(rng, body))), ("rename", (tmp, dst))]
            if index:
                # a fixed-size per-process index record, overwritten in place
                prog.append(("write", (f"{q}/index", 0, f"{k:08d} {dst:<48}".encode())))
            if rng.random() < delete_frac:
                pending_delete.append(dst)
            if (k + 1) % sync_every == 0:
                # mail picked up before the batch is synced never needs to travel
                prog += [("unlink", (d,)) for d in pending_delete]
                pending_delete = []
                prog.append((sync, ()))
        prog += [("unlink", (d,)) for d in pending_delete]
        prog.append((sync, ()))
        programs[pid] = prog
    warm = warmup_deliveries * per_op + warmup_deliveries // max(sync_every, 1)
    return Workload(f"maildir-{pattern}", placement, setup, programs, warm, cfg, all_nodes)


def coalescing(deliveries: int = 48, seed: int = 0, body: int = 2048) -> Workload:
    """Optimistic mail delivery where much of each batch is short-lived."""
    return maildir("private", nodes=2, mailboxes=1, deliveries=deliveries, body=body, seed=seed,
                   mode="optimistic", sync_every=8, index=True, delete_frac=0.5, warmup_deliveries=0)


# -- key-value store -------------------------------------------------------------------

def kv(procs: int = 2, nodes: int = 2, keys: int = 64, ops: int = 200, value: int = 256, read_frac: float = 0.5,
       seed: int = 0, sync_every: int = 16, mode: str = "pessimistic") -> Workload:
    """A log-structured key-value shape: appends to a write-ahead file and sorted tables, random gets."""
    rng = random.Random(seed)
    names = [f"n{i}" for i in range(nodes)]
    sync = "fsync" if mode == "pessimistic" else "dsync"
    placement, setup, programs = {}, {}, {}
    for i in range(procs):
        pid = f"kv{i}"
        placement[pid] = names[i % nodes]
        root = f"/db{i}"
        setup[pid] = [("mkdir", (root,)), ("create", (f"{root}/wal",)), ("create", (f"{root}/table",)), (sync, ())]
        prog: list[Op] = []
        wal_off = 0
        for k in range(ops):
            key = rng.randrange(keys)
            if rng.random() < read_frac:
                prog.append(("read", (f"{root}/table", key * value, value)))
                continue
            v = _body(rng, value)
            prog.append(("write", (f"{root}/wal", wal_off, v)))
            wal_off += value
            prog.append(("write", (f"{root}/table", key * value, v)))
            if k % sync_every == sync_every - 1:
                prog += [(sync, ()), ("truncate", (f"{root}/wal", 0))]
                wal_off = 0
        prog.append((sync, ()))
        programs[pid] = prog
    return Workload("kv", placement, setup, programs, 0, {"mode": mode}, names)


# -- sequential writer -----------------------------------------------------------------

def seqwrite(file_size: int, io: int = 4096, seed: int = 0, mode: str = "pessimistic",
             nodes: int = 2) -> Workload:
    """One process writes one file front to back, then syncs once."""
    rng = random.Random(seed)
    chunk = _body(rng, io)
    prog: list[Op] = [("write", ("/seq/data", off, chunk)) for off in range(0, file_size, io)]
    prog.append(("fsync" if mode == "pessimistic" else "dsync", ()))
    names = [f"n{i}" for i in range(nodes)]
    setup = {"w": [("mkdir", ("/seq",)), ("create", ("/seq/data",))]}
    return Workload("seqwrite", {"w": names[0]}, setup, {"w": prog}, 0, {"mode": mode}, names)


# -- partition and sort ----------------------------------------------------------------

def sort(records: int = 512, record: int = 100, partitions: int = 4, nodes: int = 2, seed: int = 0) -> Workload:
    """Partition an input file into per-key-range bucket files, then rewrite each bucket sorted.

    Partitioning runs on the first node; each bucket is sorted on the node
    that owns it, so the sort phase reads its input remotely once.
    """
    rng = random.Random(seed)
    names = [f"n{i}" for i in range(nodes)]
    recs = [_body(rng, record) for _ in range(records)]
    data = b"".join(recs)
    part: list[Op] = [("write", ("/sort/in", 0, data))]
    buckets: list[list[bytes]] = [[] for _ in range(partitions)]
    for r in recs:
        buckets[r[0] * partitions // 256].append(r)
    for b, rs in enumerate(buckets):
        part += [("create", (f"/sort/b{b}",)), ("write", (f"/sort/b{b}", 0, b"".join(rs)))]
    part.append(("fsync", ()))
    placement = {"part": names[0]}
    programs = {"part": part}
    for b, rs in enumerate(buckets):
        pid = f"sort{b}"
        placement[pid] = names[b % nodes]
        size = len(rs) * record
        programs[pid] = [("read", (f"/sort/b{b}", 0, size)), ("create", (f"/sort/out{b}",)),
                         ("write", (f"/sort/out{b}", 0, b"".join(sorted(rs)))), ("fsync", ())]
    setup = {"part": [("mkdir", ("/sort",)), ("create", ("/sort/in",)), ("fsync", ())]}
    return Workload("sort", placement, setup, programs, 0, {"mode": "pessimistic"}, names, [["part"]])


GENERATORS = {"maildir": maildir, "coalescing": coalescing, "kv": kv, "seqwrite": seqwrite, "sort": sort}


def build(spec: dict) -> Workload:
    """Build a workload from a scenario's ``workload`` section."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind not in GENERATORS:
        raise ValueError(f"unknown workload kind {kind!r}")
    return GENERATORS[kind](**spec)
