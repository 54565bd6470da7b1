"""Fail-over and recovery measurements.

Three ways back from losing the node an application runs on:

- hot: a cache replica already mirrors the shared area; it only has to
  digest the dead process's log and take over lease management.
- reserve: every cache replica is gone; the reserve is promoted and serves
  reads out of its SSD, warming NVM as blocks are touched.
- cold rebuild: the baseline. The replacement first reloads the whole shared
  area from cold storage into NVM before serving anything.

All durations are simulated nanoseconds; "bytes" are KernFS bytes read or
written while the step ran.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from ..cluster import Cluster
from ..coherence import replay
from ..config import ChainSpec, ClusterConfig, KiB, MiB
from ..kernfs import BLOCK, RecordLog

DATA_FILES = 8  # fixed file count, so lease state does not grow with the dataset


@dataclass
class Phases:
    dataset: int
    detection_ns: int = 0
    failover_ns: int = 0
    failover_bytes: int = 0
    failover_entries: int = 0
    restart_ns: int = 0
    first_op_ns: int = 0
    leases_adopted: int = 0
    provenance: list[dict[str, int]] = field(default_factory=list)

    @property
    def work(self) -> tuple[int, int]:
        return self.failover_ns, self.failover_bytes

    def row(self, variant: str) -> dict:
        return {"variant": variant, "dataset": self.dataset, "detection_ms": round(self.detection_ns / 1e6, 3),
                "failover_us": round(self.failover_ns / 1e3, 3), "failover_bytes": self.failover_bytes,
                "first_op_us": round(self.first_op_ns / 1e3, 3), "leases_adopted": self.leases_adopted}


def _load(sim: Cluster, pid: str, dataset: int, log_fill: int) -> None:
    """Write ``dataset`` bytes and digest them, then leave ``log_fill`` bytes in the log."""
    sim.call(pid, "mkdir", "/data")
    sim.call(pid, "mkdir", "/work")
    per = dataset // DATA_FILES
    chunk = 64 * KiB
    for i in range(DATA_FILES):
        f = f"/data/f{i}"
        sim.call(pid, "create", f)
        for off in range(0, per, chunk):
            sim.call(pid, "write", f, off, bytes([(i + off // chunk) % 251]) * min(chunk, per - off))
    sim.call(pid, "create", "/work/log")
    sim.quiesce()
    for off in range(0, log_fill, chunk):
        sim.call(pid, "write", "/work/log", off, b"L" * chunk)
    sim.call(pid, "fsync")


def _read_all(sim: Cluster, pid: str, dataset: int) -> Counter:
    per = dataset // DATA_FILES
    c: Counter = Counter()
    for i in range(DATA_FILES):
        for off in range(0, per, BLOCK):
            sim.call(pid, "read", f"/data/f{i}", off, BLOCK)
            c.update(sim.procs[pid].last_provenance)
    return c


def _detect(sim: Cluster, node: str) -> None:
    while sim.cm.status[node] == "ALIVE":
        sim.advance(sim.cfg.timeouts.heartbeat_interval // 10)


def measure_hot(dataset: int, log_fill: int = 1 * MiB, seed: int = 0) -> Phases:
    cfg = ClusterConfig(nodes=["n0", "n1"], chains={"/": ChainSpec("/", ["n0", "n1"])})
    sim = Cluster(cfg, seed=seed)
    sim.spawn("n0", pid="app")
    _load(sim, "app", dataset, log_fill)
    ph = Phases(dataset)
    sim.crash_node("n0")
    _detect(sim, "n0")
    rep = sim.reports["n0"]
    ph.detection_ns = rep.detected_at - rep.crashed_at
    ph.failover_ns, ph.failover_bytes, ph.failover_entries = rep.failover_ns, rep.failover_bytes, rep.failover_entries
    ph.leases_adopted = rep.leases_adopted
    t = sim.clock.now
    sim.advance(cfg.timeouts.process_restart_delay)
    sim.spawn("n1", pid="app.2", restart_of="app")
    ph.restart_ns = sim.clock.now - t
    t = sim.clock.now
    sim.call("app.2", "read", "/work/log", 0, BLOCK)
    ph.first_op_ns = sim.clock.now - t
    return ph


def _reserve_cluster(dataset: int, log_fill: int, seed: int) -> Cluster:
    cfg = ClusterConfig(nodes=["n0", "r"], chains={"/": ChainSpec("/", ["n0"], reserve="r")})
    sim = Cluster(cfg, seed=seed)
    sim.spawn("n0", pid="app")
    _load(sim, "app", dataset, log_fill)
    return sim


def measure_reserve(dataset: int, log_fill: int = 256 * KiB, seed: int = 0) -> Phases:
    """Lose the only cache replica; the reserve takes over. Reads start on SSD and warm NVM."""
    sim = _reserve_cluster(dataset, log_fill, seed)
    ph = Phases(dataset)
    sim.crash_node("n0")
    _detect(sim, "n0")
    rep = sim.reports["n0"]
    ph.detection_ns = rep.detected_at - rep.crashed_at
    ph.failover_ns, ph.failover_bytes = rep.failover_ns, rep.failover_bytes
    ph.leases_adopted = rep.leases_adopted
    sim.spawn("r", pid="app.2", restart_of="app")
    t = sim.clock.now
    sim.call("app.2", "read", "/data/f0", 0, BLOCK)
    ph.first_op_ns = sim.clock.now - t
    for _ in range(2):
        sim.call("app.2", "evict")  # drop DRAM caches so each pass shows where blocks live
        ph.provenance.append(dict(sorted(_read_all(sim, "app.2", dataset).items())))
    return ph


def cold_rebuild(sim: Cluster, node: str) -> tuple[int, int]:
    """Baseline: reload every cold block of the shared area into NVM before serving."""
    k = sim.kernfs[node]
    t0 = sim.clock.now
    b0 = k.stats["bytes_read"] + k.stats["bytes_written"]
    was = k.warming
    k.warming = True
    for ino in sorted(k.blocks):
        for blk in sorted(k.blocks[ino]):
            tier, pblk = k.blocks[ino][blk]
            if tier == "ssd":
                data = k.media.read(k.ssd_rid, pblk * BLOCK, BLOCK)
                k._warm(ino, blk, data)
                k.stats["bytes_read"] += BLOCK
                k.stats["bytes_written"] += BLOCK
    k.warming = was
    return sim.clock.now - t0, k.stats["bytes_read"] + k.stats["bytes_written"] - b0


def measure_cold(dataset: int, log_fill: int = 1 * MiB, seed: int = 0) -> Phases:
    sim = _reserve_cluster(dataset, log_fill, seed)
    ph = Phases(dataset)
    sim.crash_node("n0")
    _detect(sim, "n0")
    rep = sim.reports["n0"]
    ph.detection_ns = rep.detected_at - rep.crashed_at
    ns, nbytes = cold_rebuild(sim, "r")
    ph.failover_ns = rep.failover_ns + ns
    ph.failover_bytes = rep.failover_bytes + nbytes
    ph.leases_adopted = rep.leases_adopted
    sim.spawn("r", pid="app.2", restart_of="app")
    t = sim.clock.now
    sim.call("app.2", "read", "/data/f0", 0, BLOCK)
    ph.first_op_ns = sim.clock.now - t
    return ph


def leases_held(sim: Cluster, pid: str) -> int:
    """Leases recorded as live for ``pid`` by replaying every live manager's lease log."""
    n = 0
    for node, k in sorted(sim.kernfs.items()):
        if sim.cm.status[node] != "ALIVE":
            continue
        recs, _, _ = RecordLog.read_all(k.media, k.leaselog_rid)
        table, units, _ = replay(recs)
        n += sum(1 for u in units for l in table.get(u, []) if l.holder == pid)
    return n


def process_restart(seed: int = 0, files: int = 6) -> tuple[int, int]:
    """Kill a process and restart it in place: (leases in the log at the crash, leases re-granted)."""
    sim = Cluster(ClusterConfig(nodes=["n0", "n1"]), seed=seed)
    sim.spawn("n0", pid="db")
    sim.call("db", "mkdir", "/db")
    for i in range(files):
        sim.call("db", "create", f"/db/t{i}")
        sim.call("db", "write", f"/db/t{i}", 0, b"x" * 100)
    sim.call("db", "fsync")
    held = leases_held(sim, "db")
    sim.crash_process("db", restart=True)
    p = sim.spawn("n0", pid="db.2", restart_of="db")
    return held, p.stats["leases_regranted"]


@dataclass
class RecoverySweep:
    datasets: list[int]
    hot: list[Phases] = field(default_factory=list)
    cold: list[Phases] = field(default_factory=list)

    def spread(self, which: str = "hot") -> tuple[float, float]:
        """Relative spread (max/min - 1) of fail-over time and bytes."""
        ps = getattr(self, which)
        ns = [p.failover_ns for p in ps]
        by = [p.failover_bytes for p in ps]
        return max(ns) / min(ns) - 1, max(by) / min(by) - 1

    def rows(self) -> list[dict]:
        return [p.row("hot") for p in self.hot] + [p.row("cold-rebuild") for p in self.cold]


def recovery_sweep(datasets: list[int] | None = None, log_fill: int = 1 * MiB, seed: int = 0) -> RecoverySweep:
    ds = datasets or [4 * MiB, 8 * MiB, 20 * MiB, 40 * MiB]
    out = RecoverySweep(ds)
    for d in ds:
        out.hot.append(measure_hot(d, log_fill, seed))
        out.cold.append(measure_cold(d, log_fill, seed))
    return out
