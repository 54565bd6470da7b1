"""Parameter sweeps: update-log size versus sequential write throughput."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..config import MiB, ClusterConfig
from ..oplog import HEADER_SIZE
from .runner import Driver, make_config
from .workloads import maildir, seqwrite


def expected_digests(total_log_bytes: int, log_capacity: int, threshold: float) -> int:
    """Independent estimate: one digest per threshold-full of log, counting the final one."""
    data = log_capacity - 64  # minus the superblock
    return math.ceil(total_log_bytes / (data * threshold))


@dataclass
class SweepPoint:
    log_size: int
    digests: int
    expected: int
    sim_ns: int
    throughput: float  # bytes per simulated second
    normalized: float = 0.0


@dataclass
class LogSweep:
    file_size: int
    io: int
    points: list[SweepPoint] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        t = [p.throughput for p in self.points]
        return all(b >= a for a, b in zip(t, t[1:]))

    @property
    def digests_match(self) -> bool:
        return all(abs(p.digests - p.expected) <= 1 for p in self.points)

    def rows(self) -> list[dict]:
        return [{"log_size": p.log_size, "digests": p.digests, "expected_digests": p.expected,
                 "sim_ms": round(p.sim_ns / 1e6, 3), "throughput_MBps": round(p.throughput / 1e6, 2),
                 "normalized": round(p.normalized, 4)} for p in self.points]


def seqwrite_point(file_size: int, io: int, log_size: int, seed: int = 0,
                   base: ClusterConfig | None = None) -> SweepPoint:
    wl = seqwrite(file_size, io, seed)
    cfg = make_config(wl, base)
    cfg.sizes.log_capacity = log_size
    # keep the whole file in NVM so only the log size varies (no cold-tier migration)
    cfg.sizes.hot_capacity = max(cfg.sizes.hot_capacity, 4 * file_size)
    d = Driver(wl, cfg, seed)
    sim = d.sim
    d.setup()
    sim.quiesce()
    e0 = sim.metrics["evictions"]
    t0 = sim.clock.now
    d.run_group(sorted(wl.programs))
    sim.quiesce()
    dt = sim.clock.now - t0
    writes = len(range(0, file_size, io))
    expected = expected_digests(writes * (HEADER_SIZE + io), log_size, cfg.sizes.digest_threshold)
    return SweepPoint(log_size, sim.metrics["evictions"] - e0, expected, dt, file_size / (dt / 1e9))


def log_size_sweep(file_size: int = 64 * MiB, io: int = 4096, log_sizes: list[int] | None = None,
                   seed: int = 0, base: ClusterConfig | None = None) -> LogSweep:
    """Throughput of one sequential writer as the update log grows (1 to 16 MiB by default)."""
    sizes = log_sizes or [s * MiB for s in (1, 2, 4, 8, 16)]
    out = LogSweep(file_size, io)
    for s in sizes:
        out.points.append(seqwrite_point(file_size, io, s, seed, base))
    top = max(p.throughput for p in out.points)
    for p in out.points:
        p.normalized = p.throughput / top
    return out


@dataclass
class CoalescePoint:
    delete_frac: float
    with_coalescing: int  # bytes shipped to replicas
    without: int

    @property
    def ratio(self) -> float:
        return self.with_coalescing / self.without


def replicated_bytes(wl, coalesce: bool, seed: int = 0) -> int:
    cfg = make_config(wl)
    cfg.coalesce = coalesce
    res = Driver(wl, cfg, seed).run()
    return res.sim.net.bytes_by_tag["SEGMENT_WRITE"]


def coalescing_sweep(delete_fracs: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75), deliveries: int = 48,
                     seed: int = 0) -> list[CoalescePoint]:
    """Replicated bytes with and without coalescing as more of each batch dies before it is synced."""
    out = []
    for f in delete_fracs:
        wl = maildir("private", nodes=2, mailboxes=1, deliveries=deliveries, seed=seed, mode="optimistic",
                     sync_every=8, index=True, delete_frac=f, warmup_deliveries=0)
        out.append(CoalescePoint(f, replicated_bytes(wl, True, seed), replicated_bytes(wl, False, seed)))
    return out
