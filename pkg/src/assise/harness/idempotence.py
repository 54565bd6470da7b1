"""Crash a replica part-way through digesting a log, recover it, digest again.

The replica's shared area after recovery plus a second digest must hash
exactly like a replica that digested the same log without interruption.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..cluster import Cluster
from ..config import ChainSpec, ClusterConfig
from ..errors import NodeCrashed
from ..kernfs import KernFS
from .crashcheck import CUTS

Op = tuple[str, tuple]

REPLICA = "n1"


@dataclass
class DigestReport:
    cut_points: int = 0
    clean_hash: str = ""
    mismatches: list[tuple[int, str]] = field(default_factory=list)
    owner_agrees: bool = True

    @property
    def ok(self) -> bool:
        return not self.mismatches and self.owner_agrees


def digest_program(rng: random.Random, root: str, n: int, sync: str) -> list[Op]:
    """Write-heavy: every op succeeds, so every op lands in the log."""
    files = [f"{root}/f{i}" for i in range(4)]
    out: list[Op] = [("create", (f,)) for f in files]
    for k in range(n):
        f = rng.choice(files)
        r = rng.random()
        if r < 0.75:
            size = rng.choice([100, 4096, 6000, 12288])
            out.append(("write", (f, rng.choice([0, 2048, 8192]), bytes([(k + j) % 253 for j in range(size)]))))
        elif r < 0.9:
            out.append(("truncate", (f, rng.choice([0, 3000, 9000]))))
        else:
            g = f"{root}/g{k}"
            out += [("create", (g,)), ("write", (g, 0, b"g" * 5000)), ("unlink", (g,))]
        if k % 5 == 4:
            out.append((sync, ()))
    return out


def _prepared(seed: int, ops: int, mode: str) -> tuple[Cluster, str]:
    """A two-node chain whose replica holds a replicated but undigested log."""
    cfg = ClusterConfig(nodes=["n0", REPLICA], chains={"/": ChainSpec("/", ["n0", REPLICA])}, mode=mode)
    sim = Cluster(cfg, seed=seed, heartbeats=False)
    p = sim.spawn("n0", pid="w")
    sync = "fsync" if mode == "pessimistic" else "dsync"
    sim.call(p.pid, "mkdir", "/w")
    prog = digest_program(random.Random(seed), "/w", ops, sync)
    for op, args in prog + [(sync, ())]:
        sim.apply(p.pid, op, *args)
    log_id = p.logs["/"].log_id
    return sim, log_id


def _digest(sim: Cluster, node: str, log_id: str) -> str:
    sim.kernfs[node].digest_log(log_id)
    return sim.kernfs[node].state_hash("/")


def digest_writes(seed: int = 11, ops: int = 30, mode: str = "pessimistic") -> int:
    sim, log_id = _prepared(seed, ops, mode)
    before = sim.media.write_count.get(REPLICA, 0)
    sim.kernfs[REPLICA].digest_log(log_id)
    return sim.media.write_count.get(REPLICA, 0) - before


def crash_and_redigest(seed: int, ops: int, mode: str, write_index: int, cut: str) -> str:
    sim, log_id = _prepared(seed, ops, mode)
    sim.media.arm_crash(REPLICA, write_index, CUTS[cut])
    try:
        sim.kernfs[REPLICA].digest_log(log_id)
    except NodeCrashed:
        pass
    sim.media.disarm()
    sim.media.recover(REPLICA)
    k = KernFS.recover(sim, REPLICA, sim.roles[REPLICA])
    sim.kernfs[REPLICA] = k
    _digest(sim, REPLICA, log_id)
    return _digest(sim, REPLICA, log_id)  # a second pass must change nothing


def check_digest_idempotence(seed: int = 11, ops: int = 30, modes: tuple[str, ...] = ("pessimistic", "optimistic"),
                             cuts: tuple[str, ...] = ("none", "all", "half")) -> DigestReport:
    rep = DigestReport()
    for mode in modes:
        sim, log_id = _prepared(seed, ops, mode)
        clean = _digest(sim, REPLICA, log_id)
        owner = _digest(sim, "n0", log_id)
        rep.owner_agrees &= owner == clean
        rep.clean_hash = rep.clean_hash or clean
        n = digest_writes(seed, ops, mode)
        for i in range(1, n + 1):
            for c in cuts:
                rep.cut_points += 1
                got = crash_and_redigest(seed, ops, mode, i, c)
                if got != clean:
                    rep.mismatches.append((i, f"{mode}/{c}"))
    return rep
