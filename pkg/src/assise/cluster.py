"""The cluster: membership, fail-over, rejoin, and the simulation object itself.

:class:`Cluster` owns the clock, storage, network, one KernFS per node and
every LibFS process. The cluster manager is a single reliable actor on its
own endpoint; it sends heartbeats every second, marks silent nodes failed,
bumps the epoch, and orchestrates fail-over and rejoin.
"""
from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from .clock import SimClock
from .coherence import LEASE_TAGS, Lease, find_overlaps
from .config import ClusterConfig
from .errors import Errno, FsError, LeaseBusy, NodeCrashed, NodeFailed, ProcessCrashed
from .fscore import LibFS
from .kernfs import KernFS
from .media import Media, Tier
from .oplog import ROOT_INO
from .replication import adopt_dead_log, recover_local_log
from .simnet import Endpoint, Network

LEASE_LOG_SIZE = 64 * 1024 * 1024
CM = Endpoint("cm", "cm")


@dataclass
class ChainState:
    subtree: str
    configured: list[str]
    replicas: list[str]
    reserve: str | None = None
    promoted: bool = False


@dataclass
class LogRecord:
    """Where a process log lives, so it can be recovered when its owner dies."""

    log_id: str
    pid: str
    node: str
    subtree: str
    rid: str
    uid: int
    gid: int
    state: str = "live"  # live | dead | done


@dataclass
class RecoveryReport:
    node: str
    crashed_at: int = 0
    detected_at: int = 0
    failover_ns: int = 0
    failover_bytes: int = 0
    failover_entries: int = 0
    leases_adopted: int = 0
    rejoin_ns: int = 0
    invalidated: int = 0
    invalidated_inodes: list[int] = field(default_factory=list)
    phases: dict[str, int] = field(default_factory=dict)


class ClusterManager:
    def __init__(self, sim: "Cluster"):
        self.sim = sim
        self.ep = CM
        now = sim.clock.now
        self.status = {n: "ALIVE" for n in sim.cfg.nodes}
        self.last_hb = {n: now for n in sim.cfg.nodes}
        self.epoch = 0
        self.fail_epoch: dict[str, int] = {}
        self.fail_time: dict[str, int] = {}
        self.unrecovered: set[str] = set()
        self.units: dict[str, list] = {}
        self.events: list[tuple] = []
        self.chains = {
            root: ChainState(root, list(spec.replicas), list(spec.replicas), spec.reserve)
            for root, spec in sorted(sim.cfg.chains.items())
        }
        sim.net.bind(self.ep, self.dispatch)

    def dispatch(self, src: Endpoint, tag: str, p: Any) -> Any:
        if tag == "MGMT":
            return self.h_mgmt(src, p)
        raise ValueError(tag)

    # -- lease management assignment ----------------------------------------------
    def h_mgmt(self, src: Endpoint, p: dict) -> dict:
        sim = self.sim
        unit, node = p["unit"], p["node"]
        now = sim.clock.now
        exp = sim.cfg.timeouts.manager_expiry
        single = sim.cfg.single_manager
        cur = self.units.get(unit)
        if single:
            if cur is None:
                self.units[unit] = [single, now]
                if single != node:
                    sim.net.rpc(self.ep, Endpoint(single, "kernfs"), "TAKE", {"unit": unit, "leases": []})
            return {"manager": single, "expiry": now + exp}
        if cur is None or self.status.get(cur[0]) != "ALIVE":
            self.units[unit] = [node, now]
            return {"manager": node, "expiry": now + exp, "leases": []}
        mgr, at = cur
        if mgr == node:
            return {"manager": node, "expiry": at + exp}
        if now < at + exp:
            return {"manager": mgr, "expiry": at + exp}
        try:
            leases = sim.net.rpc(self.ep, Endpoint(mgr, "kernfs"), "MIGRATE", {"unit": unit})
        except NodeFailed as e:
            sim.report_failure(e.node)
            return self.h_mgmt(src, p)
        self.units[unit] = [node, now]
        self.events.append(("migrate", unit, mgr, node, now))
        return {"manager": node, "expiry": now + exp, "leases": leases}

    # -- membership ---------------------------------------------------------------------
    def start(self) -> None:
        self.sim.clock.schedule(self.sim.clock.now + self.sim.cfg.timeouts.heartbeat_interval, self.heartbeat, "hb")

    def heartbeat(self) -> None:
        sim = self.sim
        for n in sim.cfg.nodes:
            if self.status[n] != "ALIVE":
                continue
            try:
                sim.net.rpc(self.ep, Endpoint(n, "kernfs"), "HEARTBEAT")
                self.last_hb[n] = sim.clock.now
            except NodeFailed:
                self.mark_failed(n)
        sim.clock.schedule(sim.clock.now + sim.cfg.timeouts.heartbeat_interval, self.heartbeat, "hb")

    def notify_epoch(self) -> None:
        for n in self.sim.cfg.nodes:
            if self.status[n] in ("ALIVE", "RECOVERING") and self.sim.net.node_up(n):
                try:
                    self.sim.net.rpc(self.ep, Endpoint(n, "kernfs"), "EPOCH", {"epoch": self.epoch})
                except NodeFailed:
                    pass

    def mark_failed(self, node: str) -> None:
        if self.status.get(node) != "ALIVE":
            return
        self.status[node] = "FAILED"
        self.fail_epoch[node] = self.epoch
        self.fail_time[node] = self.sim.clock.now
        self.unrecovered.add(node)
        self.epoch += 1
        self.events.append(("failed", node, self.sim.clock.now, self.epoch))
        self.notify_epoch()
        self.sim.failover(node)

    def gc_epochs(self) -> int:
        """Bitmaps of epochs every node has recovered from can go."""
        if self.unrecovered:
            keep = min(self.fail_epoch[n] for n in self.unrecovered)
        else:
            keep = self.epoch
        for n in self.sim.cfg.nodes:
            if self.status[n] == "ALIVE":
                self.sim.kernfs[n].gc_bitmaps(keep)
        return keep


class Cluster:
    """A whole simulated deployment, driven synchronously by the caller."""

    def __init__(self, cfg: ClusterConfig | None = None, seed: int = 0, heartbeats: bool = True):
        self.cfg = cfg or ClusterConfig()
        self.seed = seed
        self.clock = SimClock()
        self.media = Media(self.clock, self.cfg.latency)
        self.media.crash_handler = self._crash_handler
        self.net = Network(self.clock, self.media, self.cfg.latency, self.cfg.timeouts.rpc_timeout)
        self.metrics: Counter = Counter()
        self.procs: dict[str, LibFS] = {}
        self.logs: dict[str, LogRecord] = {}
        self.incarnations = {n: 0 for n in self.cfg.nodes}
        self.audits = 0
        self.audit_violations: list[tuple[int, list]] = []
        self.reports: dict[str, RecoveryReport] = {}
        self._pindex = itertools.count()
        self.cm_ep = CM
        self.kernfs: dict[str, KernFS] = {}
        self.cm = ClusterManager(self)
        self.roles = {n: self._role(n) for n in self.cfg.nodes}
        roots = {root: ROOT_INO + 1 + i for i, root in enumerate(sorted(r for r in self.cfg.chains if r != "/"))}
        for n in self.cfg.nodes:
            self.kernfs[n] = KernFS(self, n, self.roles[n])
            if roots:
                self.kernfs[n].make_root_dirs(roots)
        for n in self.cfg.nodes:
            for peer in self.cfg.nodes:
                if peer != n:
                    rid = f"{peer}:llmirror:{n}"
                    self.media.create_region(peer, Tier.NVM, LEASE_LOG_SIZE, rid)
                    self.net.register(Endpoint(peer, "kernfs"), rid, [Endpoint(n, "kernfs")])
        if heartbeats:
            self.cm.start()

    def _role(self, node: str) -> str:
        replica = any(node in s.replicas for s in self.cfg.chains.values())
        reserve = any(node == s.reserve for s in self.cfg.chains.values())
        return "reserve" if reserve and not replica else "cache"

    # -- topology queries used by the protocol modules ---------------------------------
    def is_alive(self, node: str) -> bool:
        return self.cm.status.get(node) == "ALIVE" and self.net.node_up(node)

    def incarnation(self, node: str) -> int:
        return self.incarnations[node]

    def active_chain(self, subtree: str, origin: str | None = None) -> list[str]:
        cs = self.cm.chains[subtree]
        live = [n for n in cs.replicas if self.cm.status[n] == "ALIVE"]
        if origin in live:
            live.remove(origin)
            live.insert(0, origin)
        if cs.reserve and not cs.promoted and self.cm.status[cs.reserve] == "ALIVE":
            live.append(cs.reserve)
        return live

    def live_reserve(self, subtree: str) -> str | None:
        cs = self.cm.chains[subtree]
        if cs.reserve and not cs.promoted and self.cm.status[cs.reserve] == "ALIVE":
            return cs.reserve
        return None

    def fresh_peer(self, node: str) -> str | None:
        for cs in self.cm.chains.values():
            if node in cs.configured or node == cs.reserve:
                for n in self.active_chain(cs.subtree):
                    if n != node:
                        return n
        return None

    def lease_log_peers(self, node: str) -> list[str]:
        return [n for n in self.cfg.nodes if n != node and self.cm.status[n] == "ALIVE"]

    def report_failure(self, node: str) -> None:
        if self.cm.status.get(node) == "ALIVE" and not self.net.node_up(node):
            self.cm.mark_failed(node)

    def lease_expiry(self, lease: Lease) -> int:
        return self.cm.last_hb.get(lease.hnode, self.clock.now) + self.cfg.timeouts.lease_timeout

    def subtree_roots(self, subtree: str) -> list[str]:
        return sorted(r for r in self.cfg.chains if r != subtree and (subtree == "/" or r.startswith(subtree + "/")))

    # -- processes ------------------------------------------------------------------------
    def spawn(self, node: str, pid: str | None = None, uid: int = 0, gid: int = 0,
              restart_of: str | None = None) -> LibFS:
        if not self.is_alive(node):
            raise NodeFailed(node)
        index = next(self._pindex)
        pid = pid or f"p{index}"
        if pid in self.procs and self.procs[pid].alive:
            raise ValueError(f"process {pid} exists")
        lib = LibFS(self, node, pid, index, uid, gid)
        self.procs[pid] = lib
        if restart_of is not None:
            moved = []
            for n in self.cfg.nodes:
                if self.cm.status[n] != "ALIVE":
                    continue
                try:
                    moved += self.net.rpc(Endpoint(node, "kernfs"), Endpoint(n, "kernfs"), "REGRANT",
                                          {"old": restart_of, "new": pid, "hnode": node})
                except NodeFailed:
                    continue
            kl = self.kernfs[node].lm
            for scope, sub, kind, unit in moved:
                lib.leases[(scope, sub)] = kind
                kl.local_holdings.setdefault(pid, set()).add((scope, sub, unit))
            lib.stats["leases_regranted"] = len(moved)
            self.metrics["leases_regranted"] += len(moved)
        return lib

    def register_log(self, lib: LibFS, h, rid: str) -> None:
        self.logs[h.log_id] = LogRecord(h.log_id, lib.pid, lib.node, h.subtree, rid, lib.uid, lib.gid)

    def call(self, pid: str, op: str, *args, wait_limit: int | None = None) -> Any:
        """Run one operation for ``pid``, waiting out busy leases on the simulated clock."""
        p = self.procs[pid]
        if not p.alive:
            raise ProcessCrashed(pid)
        self.clock.run_due()
        start = self.clock.now
        limit = wait_limit if wait_limit is not None else 2 * self.cfg.timeouts.lease_timeout
        while True:
            try:
                return p.call(op, *args)
            except LeaseBusy as b:
                self.metrics["lease_busy"] += 1
                if self.clock.now - start > limit:
                    raise FsError(Errno.LEASE_TIMEOUT, b.scope) from None
                target = b.retry_at if b.retry_at else self.clock.now + 100_000
                self.run_until(max(target, self.clock.now + 1))
                if not p.alive:
                    raise ProcessCrashed(pid)

    def apply(self, pid: str, op: str, *args) -> tuple[str, Any]:
        try:
            return "ok", self.call(pid, op, *args)
        except FsError as e:
            return "err", e.errno.value

    def run_until(self, t: int) -> None:
        self.clock.run_until(t)

    def advance(self, dt: int) -> None:
        self.clock.run_until(self.clock.now + dt)

    def quiesce(self) -> None:
        """Evict every live process's log so all replicas settle."""
        for pid in sorted(self.procs):
            p = self.procs[pid]
            if p.alive and self.is_alive(p.node):
                self.call(pid, "evict")
        self.clock.run_due()

    # -- failures ----------------------------------------------------------------------------
    def _crash_handler(self, node: str, cut) -> None:
        self.media.crash(node, cut)
        self._mark_procs_dead(node)
        self.reports[node] = RecoveryReport(node, crashed_at=self.clock.now)

    def _mark_procs_dead(self, node: str) -> None:
        for pid in sorted(self.procs):
            p = self.procs[pid]
            if p.node == node and p.alive:
                p.alive = False
                self.net.unbind(p.ep)
        for rec in self.logs.values():
            if rec.node == node and rec.state == "live":
                rec.state = "dead"

    def crash_node(self, node: str, cut: Any = None) -> None:
        """Power-fail ``node`` now; ``cut`` picks which in-flight writes survive."""
        self._crash_handler(node, cut)

    def crash_process(self, pid: str, restart: bool = False) -> int:
        """Kill one process; its node's KernFS recovers the log right away.

        Returns the number of leases released (zero when a restart will take them over).
        """
        p = self.procs[pid]
        p.crash()
        released = 0
        for subtree in sorted(p.logs):
            h = p.logs[subtree]
            rec = self.logs[h.log_id]
            recover_local_log(self, p.node, rec.rid, h.log_id, subtree, p.uid, p.gid)
            rec.state = "done"
        if not restart:
            released = self.kernfs[p.node].lm.release_process(pid)
        return released

    def failover(self, node: str) -> RecoveryReport:
        t0 = self.clock.now
        rep = self.reports.setdefault(node, RecoveryReport(node, crashed_at=t0))
        rep.detected_at = t0
        ksum0 = self._kernfs_work()
        for cs in self.cm.chains.values():
            if node in cs.replicas:
                cs.replicas.remove(node)
            live = [n for n in cs.replicas if self.cm.status[n] == "ALIVE"]
            if not live and cs.reserve and not cs.promoted and self.cm.status[cs.reserve] == "ALIVE":
                cs.promoted = True
                cs.replicas = [cs.reserve]
                self.kernfs[cs.reserve].promote()
                self.cm.events.append(("promote", cs.subtree, cs.reserve, self.clock.now))
        for log_id in sorted(self.logs):
            rec = self.logs[log_id]
            if rec.node != node or rec.state == "done":
                continue
            rec.state = "dead"
            members = [n for n in self.active_chain(rec.subtree) if log_id in self.kernfs[n].sources]
            adopt_dead_log(self, log_id, members)
            rec.state = "failed-over"
        units = sorted(u for u, (m, _) in self.cm.units.items() if m == node)
        succ = self.successor(node)
        if units and succ is not None:
            rep.leases_adopted = self.kernfs[succ].lm.adopt(node, units)
            for u in units:
                self.cm.units[u] = [succ, self.clock.now]
        ksum1 = self._kernfs_work()
        rep.failover_ns = self.clock.now - t0
        rep.failover_bytes = ksum1[0] - ksum0[0]
        rep.failover_entries = ksum1[1] - ksum0[1]
        return rep

    def _kernfs_work(self) -> tuple[int, int]:
        b = e = 0
        for k in self.kernfs.values():
            b += k.stats["bytes_read"] + k.stats["bytes_written"]
            e += k.stats["digested_entries"]
        return b, e

    def successor(self, node: str) -> str | None:
        nodes = self.cfg.nodes
        i = nodes.index(node)
        for n in nodes[i + 1 :] + nodes[:i]:
            if self.cm.status[n] == "ALIVE":
                return n
        return None

    def restart_node(self, node: str) -> RecoveryReport:
        """Reboot a crashed node: local recovery, then rejoin its chains."""
        cm = self.cm
        t0 = self.clock.now
        self.run_until(self.clock.now + self.cfg.timeouts.os_recovery_delay)
        self.media.recover(node)
        kfs = KernFS.recover(self, node, self.roles[node])
        self.kernfs[node] = kfs
        kfs.epoch = cm.epoch
        rep = self.reports.setdefault(node, RecoveryReport(node))
        if cm.status[node] == "ALIVE":
            # came back before anyone noticed: finish its dead processes' logs locally
            for log_id in sorted(self.logs):
                rec = self.logs[log_id]
                if rec.node == node and rec.state == "dead":
                    recover_local_log(self, node, rec.rid, log_id, rec.subtree, rec.uid, rec.gid)
                    rec.state = "done"
            rep.rejoin_ns = self.clock.now - t0
            return rep
        cm.status[node] = "RECOVERING"
        kfs.lm.drop_all()
        kfs.reset_mirrors()
        for log_id in sorted(self.logs):
            rec = self.logs[log_id]
            if rec.node == node and rec.state != "live":
                if log_id in kfs.sources:
                    kfs.commit({"detach": log_id})
                self.media.delete_region(rec.rid)
                rec.state = "done"
        # every lease held by this node's processes must have expired
        self.run_until(max(self.clock.now, cm.last_hb[node] + self.cfg.timeouts.lease_timeout))
        since = cm.fail_epoch[node]
        invalidated = 0
        all_inos: set[int] = set()
        for cs in cm.chains.values():
            if node not in cs.configured and node != cs.reserve:
                continue
            peers = [n for n in self.active_chain(cs.subtree) if n != node]
            if not peers:
                continue
            inos: set[int] = set()
            for peer in peers:
                got = self.net.rpc(kfs.ep, Endpoint(peer, "kernfs"), "BITMAPS", {"since": since})
                for bits in got.values():
                    inos.update(bits)
            invalidated += kfs.refresh_inodes(sorted(inos), peers[0])
            all_inos |= inos
        rep.invalidated = invalidated
        rep.invalidated_inodes = sorted(all_inos)
        for cs in cm.chains.values():
            if node in cs.configured and node not in cs.replicas:
                if cs.promoted:
                    cs.replicas.remove(cs.reserve)
                    cs.promoted = False
                    self.kernfs[cs.reserve].demote()
                    self.cm.events.append(("demote", cs.subtree, cs.reserve, self.clock.now))
                cs.replicas.append(node)
                back = [n for n in cs.configured if cm.status[n] == "ALIVE" or n == node]
                if back == cs.configured:
                    cs.replicas = list(cs.configured)
        cm.status[node] = "ALIVE"
        cm.last_hb[node] = self.clock.now
        cm.unrecovered.discard(node)
        cm.epoch += 1
        cm.events.append(("rejoined", node, self.clock.now, cm.epoch))
        cm.notify_epoch()
        cm.gc_epochs()
        self.incarnations[node] += 1
        for n in self.cfg.nodes:
            if n != node and cm.status[n] == "ALIVE":
                self.kernfs[n].lm.resync_peer(node)
        rep.rejoin_ns = self.clock.now - t0
        return rep

    # -- audits and state -----------------------------------------------------------------
    def audit_leases(self) -> None:
        """Continuous safety audit: no two live holders may own conflicting leases."""
        self.audits += 1
        granted = []
        for n in self.cfg.nodes:
            if self.cm.status[n] == "ALIVE" and self.net.node_up(n):
                granted += self.kernfs[n].lm.all_leases()
        held = []
        for pid in sorted(self.procs):
            p = self.procs[pid]
            if p.alive:
                for (scope, sub), kind in sorted(p.leases.items()):
                    held.append(Lease(scope, kind, sub, pid, p.node, "", 0))
        bad = find_overlaps(granted) + find_overlaps(held)
        if bad:
            self.audit_violations.append((self.clock.now, [(a.to_dict(), b.to_dict()) for a, b in bad]))

    def lease_hops(self) -> int:
        return sum(self.net.remote_messages[t] for t in LEASE_TAGS)

    def replica_hashes(self, subtree: str = "/") -> dict[str, str]:
        excl = self.subtree_roots(subtree)
        return {n: self.kernfs[n].state_hash(subtree, excl) for n in self.active_chain(subtree)}

    def converged(self) -> bool:
        return all(len(set(self.replica_hashes(s).values())) <= 1 for s in self.cm.chains)
