"""Chain replication of update logs and chain-wide eviction.

The process that owns a log (or its local KernFS, once the process is dead)
drives replication. A segment is laid out at the log's mirror cursor and
RDMA-written into the first hop's mirror; a CHAIN_STEP RPC then makes each
replica forward the same slices from its own mirror to the next hop. Acks
come back as the RPC replies unwind. Mirror writes are positional and tagged
with sequence numbers, so a retry after a chain change rewrites identical
bytes at identical offsets.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

from .errors import ChainUnavailable, NodeFailed
from .oplog import UpdateLog, extract_segment, layout
from .simnet import Endpoint

if TYPE_CHECKING:
    from .cluster import Cluster


@dataclass
class ReplicationCursor:
    """Per replica: last seq written into its mirror and last seq it acked."""

    written: dict[str, int] = field(default_factory=dict)
    acked: dict[str, int] = field(default_factory=dict)

    def wrote(self, node: str, seq: int) -> None:
        self.written[node] = max(self.written.get(node, 0), seq)

    def ack(self, node: str, seq: int) -> None:
        if seq > self.written.get(node, 0):
            raise AssertionError(f"{node} acked {seq} beyond what it was sent")
        self.acked[node] = max(self.acked.get(node, 0), seq)

    def chain_acked(self, nodes: Iterable[str]) -> int:
        nodes = list(nodes)
        return min((self.acked.get(n, 0) for n in nodes), default=0)


@dataclass
class LogHandle:
    """Everything needed to replicate and evict one update log."""

    log_id: str
    log: UpdateLog
    node: str
    ep: Endpoint
    subtree: str
    uid: int = 0
    gid: int = 0
    coalesce: bool = False
    mirrors: dict[str, int] = field(default_factory=dict)
    cursor: ReplicationCursor = field(default_factory=ReplicationCursor)
    stats: dict[str, int] = field(default_factory=lambda: {"segments": 0, "bytes": 0, "retries": 0,
                                                           "evictions": 0, "resyncs": 0})


def _kfs(node: str) -> Endpoint:
    return Endpoint(node, "kernfs")


def mirror_rid(node: str, log_id: str) -> str:
    return f"{node}:mirror:{log_id}"


def remote_members(sim: "Cluster", h: LogHandle) -> list[str]:
    return [n for n in sim.active_chain(h.subtree, h.node) if n != h.node]


def ensure_mirrors(sim: "Cluster", h: LogHandle, nodes: list[str]) -> None:
    """Attach mirrors on new chain members and bring them up to the replicated watermark."""
    net = sim.net
    for n in nodes:
        inc = sim.incarnation(n)
        if h.mirrors.get(n) == inc:
            continue
        net.rpc(h.ep, _kfs(n), "MIRROR_ATTACH",
                {"log": h.log_id, "capacity": h.log.capacity, "uid": h.uid, "gid": h.gid})
        net.rpc(h.ep, _kfs(n), "MIRROR_RESET", {"log": h.log_id, "seq": h.log.head_seq, "off": h.log.mirror_head})
        h.cursor.written[n] = h.cursor.acked[n] = h.log.head_seq
        if h.log.replicated_seq > h.log.head_seq:
            seg = extract_segment(h.log, h.log.replicated_seq, h.coalesce, after_seq=h.log.head_seq)
            slices, end = layout(seg.blobs, h.log.mirror_head, h.log.capacity)
            if end != h.log.mirror_off:
                raise AssertionError(f"resync of {h.log_id} does not reproduce the mirror layout")
            for off, data in slices:
                net.wait(net.rdma_write(h.ep, _kfs(n), mirror_rid(n, h.log_id), off, data, tag="SEGMENT_WRITE"))
            h.cursor.wrote(n, h.log.replicated_seq)
            h.cursor.ack(n, h.log.replicated_seq)
            h.stats["resyncs"] += 1
        h.mirrors[n] = inc


def replicate(sim: "Cluster", h: LogHandle, up_to: int | None = None, coalesced: bool | None = None) -> int:
    """Replicate committed entries through ``up_to`` down the chain; returns the acked seq.

    On a replica failure the failure is reported, the chain is recomputed and
    the whole segment is resent from the replicated watermark.
    """
    log = h.log
    coalesced = h.coalesce if coalesced is None else coalesced
    up_to = log.last_commit_seq if up_to is None else up_to
    net = sim.net
    for _attempt in range(len(sim.cfg.nodes) + 2):
        remote = remote_members(sim, h)
        if not remote:
            if not sim.active_chain(h.subtree, h.node):
                raise ChainUnavailable(h.subtree)
            if up_to > log.replicated_seq:
                log.mark_replicated(up_to)
            return log.replicated_seq
        try:
            ensure_mirrors(sim, h, remote)
            if up_to <= log.replicated_seq:
                return log.replicated_seq
            seg = extract_segment(log, up_to, coalesced)
            slices, new_off = layout(seg.blobs, log.mirror_off, log.capacity)
            first = remote[0]
            for off, data in slices:
                net.wait(net.rdma_write(h.ep, _kfs(first), mirror_rid(first, h.log_id), off, data,
                                        tag="SEGMENT_WRITE"))
            h.cursor.wrote(first, up_to)
            acks = net.rpc(h.ep, _kfs(first), "CHAIN_STEP",
                           {"log": h.log_id, "slices": [(o, len(d)) for o, d in slices], "rest": remote[1:],
                            "last": up_to})
        except NodeFailed as e:
            h.stats["retries"] += 1
            sim.report_failure(e.node)
            continue
        for n in remote[1:]:
            h.cursor.wrote(n, up_to)
        for n, seq in acks.items():
            h.cursor.ack(n, seq)
        if h.cursor.chain_acked(remote) < up_to:
            raise AssertionError(f"chain ack for {h.log_id} is missing replicas")
        log.mark_replicated(up_to, new_off)
        h.stats["segments"] += 1
        h.stats["bytes"] += sum(len(d) for _, d in slices)
        sim.metrics["replicated_bytes"] += sum(len(d) for _, d in slices) * len(remote)
        return up_to
    raise ChainUnavailable(f"{h.subtree}: replication of {h.log_id} keeps failing")


def commit_open(h: LogHandle, time: int) -> int:
    h.log.append_commit(time, coalesced=False)
    return h.log.last_commit_seq


def chain_evict(sim: "Cluster", h: LogHandle) -> dict[str, dict]:
    """Replicate everything committed, then digest it on every chain member in parallel."""
    log = h.log
    if log.last_commit_seq > log.replicated_seq:
        replicate(sim, h)
    through = log.replicated_seq
    if through <= log.head_seq:
        return {}
    members = sim.active_chain(h.subtree, h.node)
    net = sim.net
    targets = [n for n in members if n != h.node or sim.kernfs[n].sources.get(h.log_id) is not None]

    def branch(n: str):
        return lambda: net.rpc(h.ep, _kfs(n), "EVICT", {"log": h.log_id, "through": through})

    results = sim.clock.parallel([branch(n) for n in targets])
    reports = {}
    for n, r in zip(targets, results):
        if isinstance(r, NodeFailed):
            sim.report_failure(r.node)
        elif isinstance(r, Exception):
            raise r
        else:
            reports[n] = r
    log.reclaim(through, mirror_head=log.mirror_off)
    h.stats["evictions"] += 1
    sim.metrics["evictions"] += 1
    return reports


def mirror_extent(media, rid: str, start: int, ents) -> list[tuple[int, int]]:
    """Byte ranges of a mirror that hold ``ents`` (split where the ring wrapped)."""
    if not ents:
        return []
    cap = media.region(rid).capacity
    out = []
    lo = start
    prev_end = start
    for e in ents:
        if e.pos < prev_end:
            out.append((lo, cap))
            lo = e.pos
        prev_end = e.pos + e.size
    out.append((lo, prev_end))
    return [(a, b - a) for a, b in out if b > a]


def adopt_dead_log(sim: "Cluster", log_id: str, members: list[str]) -> dict[str, int]:
    """Fail-over: the first live member digests its mirror and brings the others level.

    Only complete transaction batches are applied; a partially written segment
    past the last COMMIT is discarded.
    """
    if not members:
        return {}
    head = members[0]
    kh = sim.kernfs[head]
    src = kh.sources.get(log_id)
    if src is None:
        return {}
    ents = kh.pending_entries(log_id)
    ranges = mirror_extent(sim.media, src.rid, src.off, ents)
    for n in members[1:]:
        ks = sim.kernfs[n].sources.get(log_id)
        if ks is None or (ks.seq, ks.off) != (src.seq, src.off):
            continue
        for off, length in ranges:
            data = sim.media.read(src.rid, off, length, charge=False)
            sim.net.wait(sim.net.rdma_write(kh.ep, _kfs(n), mirror_rid(n, log_id), off, data, tag="SEGMENT_WRITE"))
    done = {}

    def branch(n: str):
        return lambda: sim.net.rpc(_kfs(head), _kfs(n), "EVICT", {"log": log_id})

    for n, r in zip(members, sim.clock.parallel([branch(n) for n in members])):
        if isinstance(r, NodeFailed):
            sim.report_failure(r.node)
        elif isinstance(r, Exception):
            raise r
        else:
            done[n] = r["seq"]
    return done


def recover_local_log(sim: "Cluster", node: str, rid: str, log_id: str, subtree: str, uid: int, gid: int,
                      mirrors: dict[str, int] | None = None) -> LogHandle:
    """Reopen a dead process's log on a live node, close its last batch and evict it."""
    log = UpdateLog.open(sim.media, rid, owner=log_id, threshold=sim.cfg.sizes.digest_threshold)
    log.drop_after(log.op_boundary())
    if log.tail_seq > log.last_commit_seq:
        log.append_commit(sim.clock.now)
    h = LogHandle(log_id, log, node, _kfs(node), subtree, uid, gid,
                  coalesce=sim.cfg.mode == "optimistic" and sim.cfg.coalesce)
    # the owner's view of attached mirrors died with it: resync every member
    h.mirrors = dict(mirrors or {})
    chain_evict(sim, h)
    return h


def mode_semantics(mode: str, completed: int, commit_points: Iterable[int], acked_points: Iterable[int],
                   failure: str) -> set[int]:
    """Admissible recovered prefix lengths (in completed operations) for one process.

    ``commit_points`` are the op counts at which a batch was closed (by a
    sync call, an eviction or a lease handoff) and ``acked_points`` those at
    which a sync call returned. A process-only failure keeps the node's NVM
    log, so every completed operation survives in either mode. A node failure
    recovers some closed batch boundary at or after the last acknowledged one:
    replication is ordered, so no later batch can survive without the earlier
    ones.
    """
    if mode not in ("pessimistic", "optimistic"):
        raise ValueError(mode)
    if failure == "process":
        return {completed}
    floor = max(list(acked_points) + [0])
    pts = {p for p in commit_points if floor <= p <= completed} | {floor}
    return pts
