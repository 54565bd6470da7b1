"""Lease-based cache coherence.

Leases are scoped by path. A lease covers its own path, and a subtree lease
also covers everything below it (compared component by component, so
``/tmp/x`` never covers ``/tmp/xy``). Two leases conflict when their scopes
overlap, they belong to different holders, and at least one is a write lease.

Each management unit (by default a top-level directory, plus ``/``) is
managed by exactly one KernFS at a time. The cluster manager hands out unit
management and lets it migrate lazily: once an assignment is older than the
expiry interval, the next KernFS that asks takes it over together with the
lease table.

Every grant, release and management change is appended to the manager's
lease log in NVM and replicated to its peers before the grant returns, so a
successor can rebuild the table (and its grant order) after a crash.
"""
from __future__ import annotations

import bisect
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Any, Callable

from .errors import LeaseBusy, NetError, NodeFailed
from .posix import is_under, split
from .simnet import Endpoint, ProcessGone

if TYPE_CHECKING:
    from .kernfs import KernFS

LEASE_TAGS = ("ACQUIRE", "FORWARD", "GRANT", "REVOKE", "RELEASE", "MIGRATE", "MGMT", "REGRANT")


@dataclass
class Lease:
    scope: str
    kind: str
    subtree: bool
    holder: str
    hnode: str
    manager: str
    gen: int
    granted_at: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def covers(scope: str, subtree: bool, path: str) -> bool:
    return path == scope or (subtree and is_under(path, scope))


def overlaps(a_scope: str, a_sub: bool, b_scope: str, b_sub: bool) -> bool:
    return a_scope == b_scope or (a_sub and is_under(b_scope, a_scope)) or (b_sub and is_under(a_scope, b_scope))


def conflicts(a: Lease, b: Lease) -> bool:
    if a.holder == b.holder:
        return False
    if a.kind != "write" and b.kind != "write":
        return False
    return overlaps(a.scope, a.subtree, b.scope, b.subtree)


def unit_of(path: str, depth: int = 1) -> str:
    comps = split(path)
    return "/" + "/".join(comps[:depth]) if comps else "/"


def find_overlaps(leases: list[Lease]) -> list[tuple[Lease, Lease]]:
    """Every conflicting pair in ``leases`` (the safety audit).

    Leases are bucketed by scope, so only pairs whose scopes can overlap are
    compared: same scope, or a subtree lease against scopes below it.
    """
    by_scope: dict[str, list[Lease]] = {}
    for l in leases:
        by_scope.setdefault(l.scope, []).append(l)
    scopes = sorted(by_scope)
    bad = []
    for s in scopes:
        group = by_scope[s]
        for i, a in enumerate(group):
            for b in group[i + 1 :]:
                if conflicts(a, b):
                    bad.append((a, b))
        subs = [a for a in group if a.subtree]
        if not subs:
            continue
        prefix = "/" if s == "/" else s + "/"
        lo = bisect.bisect_left(scopes, prefix)
        for t in scopes[lo:]:
            if not t.startswith(prefix):
                break
            if t == s:
                continue
            for a in subs:
                for b in by_scope[t]:
                    if conflicts(a, b):
                        bad.append((a, b))
    return bad


def find_overlaps_naive(leases: list[Lease]) -> list[tuple[Lease, Lease]]:
    """All-pairs reference for :func:`find_overlaps`."""
    return [(a, b) for i, a in enumerate(leases) for b in leases[i + 1 :] if conflicts(a, b)]


def replay(records: list[dict]) -> tuple[dict[str, list[Lease]], set[str], list[tuple]]:
    """Rebuild lease tables, managed units and grant order from lease-log records."""
    table: dict[str, list[Lease]] = {}
    units: set[str] = set()
    order: list[tuple] = []
    for r in records:
        t = r["t"]
        if t == "take":
            units.add(r["unit"])
            table[r["unit"]] = [Lease(**d) for d in r["leases"]]
        elif t == "drop":
            units.discard(r["unit"])
            table.pop(r["unit"], None)
        elif t == "grant":
            lease = Lease(**r["lease"])
            table.setdefault(r["unit"], []).append(lease)
            order.append((lease.scope, lease.kind, lease.subtree, lease.holder, lease.gen))
        elif t == "release":
            table[r["unit"]] = [l for l in table.get(r["unit"], []) if l.gen != r["gen"]]
        elif t == "regrant":
            for l in table.get(r["unit"], []):
                if l.holder == r["old"]:
                    l.holder, l.hnode = r["new"], r["hnode"]
    return table, units, order


class LeaseManager:
    """Lease-manager role of one KernFS, plus its local-holder bookkeeping."""

    def __init__(self, kfs: "KernFS"):
        from .kernfs import RecordLog

        self.kfs = kfs
        self.sim = kfs.sim
        self.node = kfs.node
        self.units: set[str] = set()
        self.table: dict[str, list[Lease]] = {}
        self.hints: dict[str, tuple[str, int]] = {}
        self.waiters: dict[str, list[tuple[str, str, str, bool, int]]] = {}
        self.local_holdings: dict[str, set[tuple[str, bool, str]]] = {}
        self.gen = 0
        self.grant_order: list[tuple] = []
        self.log = RecordLog(kfs.media, kfs.leaselog_rid, replicate=self._replicate)
        self.depth = self.sim.cfg.lease_unit_depth

    def handlers(self) -> dict[str, Callable[[Endpoint, Any], Any]]:
        return {
            "ACQUIRE": self.h_acquire,
            "FORWARD": self.h_forward,
            "RELEASE": self.h_release,
            "MIGRATE": self.h_migrate,
            "REVOKE": self.h_revoke,
            "REGRANT": self.h_regrant,
            "TAKE": lambda src, p: self.take(p["unit"], p.get("leases", [])),
        }

    # -- persistence -----------------------------------------------------------------
    def _replicate(self, off: int, blob: bytes) -> None:
        net = self.sim.net
        for peer in self.sim.lease_log_peers(self.node):
            rid = f"{peer}:llmirror:{self.node}"
            try:
                net.wait(net.rdma_write(self.kfs.ep, Endpoint(peer, "kernfs"), rid, off, blob, tag="LEASE_LOG_REPL"))
            except NodeFailed as e:
                self.sim.report_failure(e.node)

    def _record(self, rec: dict) -> None:
        self.log.append(rec)

    def recover(self) -> None:
        from .kernfs import RecordLog

        self.log, recs = RecordLog.reopen(self.kfs.media, self.kfs.leaselog_rid, self._replicate)
        self.table, self.units, self.grant_order = replay(recs)
        self.gen = max([l.gen for ls in self.table.values() for l in ls] + [g[-1] for g in self.grant_order] + [0])

    def drop_all(self) -> None:
        for unit in sorted(self.units):
            self._record({"t": "drop", "unit": unit})
        self.units.clear()
        self.table.clear()
        self.hints.clear()

    def adopt(self, failed: str, units: list[str]) -> int:
        """Take over ``units`` from a failed manager using our copy of its lease log."""
        from .kernfs import RecordLog

        rid = f"{self.node}:llmirror:{failed}"
        recs, _, _ = RecordLog.read_all(self.kfs.media, rid)
        table, _, order = replay(recs)
        n = 0
        for unit in units:
            leases = table.get(unit, [])
            for l in leases:
                l.manager = self.node
            self.take(unit, [l.to_dict() for l in leases])
            n += len(leases)
        self.gen = max([self.gen] + [g[-1] for g in order])
        return n

    # -- management --------------------------------------------------------------------
    def take(self, unit: str, leases: list[dict]) -> None:
        self.units.add(unit)
        self.table[unit] = [Lease(**d) for d in leases]
        for l in self.table[unit]:
            l.manager = self.node
            self.gen = max(self.gen, l.gen)
        self.hints.pop(unit, None)
        self._record({"t": "take", "unit": unit, "leases": [l.to_dict() for l in self.table[unit]]})

    def h_migrate(self, src: Endpoint, p: dict) -> list[dict]:
        unit = p["unit"]
        leases = [l.to_dict() for l in self.table.pop(unit, [])]
        self.units.discard(unit)
        self.waiters.pop(unit, None)
        self._record({"t": "drop", "unit": unit})
        return leases

    def resolve(self, unit: str, refresh: bool = False) -> str:
        if unit in self.units:
            return self.node
        hint = self.hints.get(unit)
        if hint and not refresh and hint[1] > self.sim.clock.now:
            return hint[0]
        reply = self.sim.net.rpc(self.kfs.ep, self.sim.cm_ep, "MGMT", {"unit": unit, "node": self.node})
        mgr = reply["manager"]
        if mgr == self.node:
            if unit not in self.units:
                self.take(unit, reply.get("leases", []))
        else:
            self.hints[unit] = (mgr, reply["expiry"])
        return mgr

    # -- requests from local LibFSes -------------------------------------------------------
    def h_acquire(self, src: Endpoint, p: dict) -> dict:
        unit = unit_of(p["scope"], self.depth)
        refresh = False
        for _ in range(6):
            try:
                mgr = self.resolve(unit, refresh)
            except NodeFailed:
                continue
            if mgr == self.node:
                reply = self.grant(p)
            else:
                try:
                    reply = self.sim.net.rpc(self.kfs.ep, Endpoint(mgr, "kernfs"), "FORWARD", p)
                except NodeFailed as e:
                    self.sim.report_failure(e.node)
                    refresh = True
                    continue
            if reply.get("notmgr"):
                refresh = True
                continue
            if "lease" in reply:
                self.local_holdings.setdefault(p["holder"], set()).add((p["scope"], p["sub"], unit))
            return reply
        return {"busy": [p["scope"], "?", None]}

    def h_forward(self, src: Endpoint, p: dict) -> dict:
        unit = unit_of(p["scope"], self.depth)
        if unit not in self.units:
            return {"notmgr": True}
        return self.grant(p)

    def h_release(self, src: Endpoint, p: dict) -> dict:
        """Release from a holder; forwarded to the manager when it is elsewhere."""
        unit = unit_of(p["scope"], self.depth) if p.get("scope") else p["unit"]
        if p.get("local"):
            held = self.local_holdings.get(p["holder"], set())
            held.discard((p.get("scope"), p.get("sub"), unit))
            mgr = self.resolve(unit) if unit not in self.units else self.node
            if mgr != self.node:
                try:
                    return self.sim.net.rpc(self.kfs.ep, Endpoint(mgr, "kernfs"), "RELEASE", dict(p, local=False))
                except NodeFailed as e:
                    self.sim.report_failure(e.node)
                    return {"ok": False}
        if unit not in self.units:
            return {"notmgr": True}
        for l in list(self.table.get(unit, [])):
            if l.holder == p["holder"] and (p.get("scope") is None or (l.scope == p["scope"] and l.subtree == p["sub"])):
                self.drop(unit, l)
        return {"ok": True}

    def release_process(self, pid: str) -> int:
        """A local process died and its log was evicted: release everything it held."""
        n = 0
        for scope, sub, unit in sorted(self.local_holdings.pop(pid, set())):
            try:
                self.h_release(self.kfs.ep, {"scope": scope, "sub": sub, "holder": pid, "local": True})
                n += 1
            except NetError:
                pass
        return n

    def h_regrant(self, src: Endpoint, p: dict) -> list[list]:
        """A restarted process takes over the leases of the process it replaces."""
        moved = []
        for unit in sorted(self.units):
            hit = False
            for l in self.table.get(unit, []):
                if l.holder == p["old"]:
                    l.holder, l.hnode = p["new"], p["hnode"]
                    moved.append([l.scope, l.subtree, l.kind, unit])
                    hit = True
            if hit:
                self._record({"t": "regrant", "unit": unit, "old": p["old"], "new": p["new"], "hnode": p["hnode"]})
        return moved

    def resync_peer(self, peer: str) -> None:
        """Bring a rejoined peer's copy of our lease log up to date."""
        if self.log.off == 0:
            return
        data = self.kfs.media.read(self.kfs.leaselog_rid, 0, self.log.off, charge=False)
        net = self.sim.net
        net.wait(net.rdma_write(self.kfs.ep, Endpoint(peer, "kernfs"), f"{peer}:llmirror:{self.node}", 0, data,
                                tag="LEASE_LOG_REPL"))

    # -- manager side ----------------------------------------------------------------------
    def drop(self, unit: str, l: Lease) -> None:
        self.table[unit] = [x for x in self.table.get(unit, []) if x.gen != l.gen]
        self._record({"t": "release", "unit": unit, "gen": l.gen})

    def grant(self, p: dict) -> dict:
        """Grant at this manager, revoking conflicting holders first."""
        unit = unit_of(p["scope"], self.depth)
        now = self.sim.clock.now
        want = Lease(p["scope"], p["kind"], p["sub"], p["holder"], p["hnode"], self.node, 0, now)
        # FIFO fairness: an earlier waiter with a conflicting request goes first
        waiting = [w for w in self.waiters.get(unit, []) if now - w[4] < self.sim.cfg.timeouts.lease_timeout]
        self.waiters[unit] = waiting
        for holder, scope, kind, sub, _ in waiting:
            if holder == want.holder:
                break
            other = Lease(scope, kind, sub, holder, "", self.node, 0)
            if conflicts(other, want):
                return {"busy": [scope, holder, None]}
        leases = self.table.setdefault(unit, [])
        mine = [l for l in leases if l.holder == want.holder and l.scope == want.scope and l.subtree == want.subtree]
        if mine and (mine[0].kind == "write" or want.kind == "read"):
            return {"lease": mine[0].to_dict()}
        try:
            for l in [l for l in leases if conflicts(l, want)]:
                self.revoke(unit, l)
        except LeaseBusy as b:
            if not any(w[0] == want.holder for w in self.waiters.get(unit, [])):
                self.waiters.setdefault(unit, []).append((want.holder, want.scope, want.kind, want.subtree, now))
            return {"busy": [b.scope, b.holder, b.retry_at]}
        self.waiters[unit] = [w for w in self.waiters.get(unit, []) if w[0] != want.holder]
        for l in mine:
            self.drop(unit, l)
        self.gen += 1
        want.gen = self.gen
        self._record({"t": "grant", "unit": unit, "lease": want.to_dict()})
        self.table[unit].append(want)
        self.grant_order.append((want.scope, want.kind, want.subtree, want.holder, want.gen))
        self.sim.audit_leases()
        return {"lease": want.to_dict()}

    def revoke(self, unit: str, l: Lease) -> None:
        net = self.sim.net
        try:
            ok = net.rpc(self.kfs.ep, Endpoint(l.hnode, "kernfs"), "REVOKE", l.to_dict())
        except NodeFailed as e:
            self.sim.report_failure(e.node)
            ok = None
        if ok is None:
            exp = self.sim.lease_expiry(l)
            if self.sim.clock.now >= exp:
                self.drop(unit, l)
                return
            raise LeaseBusy(l.scope, l.holder, exp)
        if not ok:
            raise LeaseBusy(l.scope, l.holder)
        self.drop(unit, l)

    def h_revoke(self, src: Endpoint, p: dict) -> bool | None:
        """At the holder's node: ask the LibFS to give the lease back.

        ``None`` means the holder is gone (its crash recovery releases it).
        """
        try:
            ok = self.sim.net.rpc(self.kfs.ep, Endpoint(self.node, p["holder"]), "REVOKE", p)
        except ProcessGone:
            return True
        if ok:
            held = self.local_holdings.get(p["holder"], set())
            held.discard((p["scope"], p["subtree"], unit_of(p["scope"], self.depth)))
        return ok

    def all_leases(self) -> list[Lease]:
        return [l for unit in sorted(self.units) for l in self.table.get(unit, [])]
