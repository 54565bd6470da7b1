"""LibFS: the per-process file system library.

Mutations are appended to a process-private update log in local NVM and
reflected in a small metadata overlay, so a process always reads its own
writes. Reads search the private log, then the DRAM read cache, then the
node's shared area (and, for cold blocks, a reserve replica in parallel),
and finally a remote replica. Every operation first takes the leases it
needs; a lease taken is kept until another process asks for it.

Operations run as two steps, ``prepare`` (take and pin leases) and
``execute``, so a scheduler can interleave processes between them.
"""
from __future__ import annotations

from collections import Counter, OrderedDict
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from .errors import Errno, FsError, LeaseBusy
from .kernfs import Inode, may_read, may_write
from .media import Tier
from .oplog import OP_END, ROOT_INO, OpKind, UpdateLog, meta_payload
from .posix import basename, is_under, normalize, parent, split
from .replication import LogHandle, chain_evict, replicate
from .simnet import Endpoint

if TYPE_CHECKING:
    from .cluster import Cluster

BLOCK = 4096
WRITE_CHUNK = 64 * 1024
ZERO = bytes(BLOCK)
MUTATING = {"create", "mkdir", "write", "truncate", "unlink", "rename"}


@dataclass
class FileHandle:
    pid: str
    ino: int
    path: str
    flags: str = "rw"
    offset: int = 0


@dataclass
class Prepared:
    op: str
    args: tuple
    pins: list[tuple[str, bool]]


def ancestors(path: str) -> list[str]:
    comps = split(path)
    return ["/"] + ["/" + "/".join(comps[:i]) for i in range(1, len(comps))] if comps else []


def lease_requests(op: str, args: tuple) -> list[tuple[str, str, bool]]:
    """(scope, kind, subtree) triples an operation needs, in acquisition order."""
    want: dict[tuple[str, bool], str] = {}

    def need(scope: str, kind: str, sub: bool = False) -> None:
        key = (scope, sub)
        if want.get(key) != "write":
            want[key] = kind

    if op == "rename":
        src, dst = normalize(args[0]), normalize(args[1])
        for p in (src, dst):
            for a in ancestors(p):
                need(a, "read")
        need(parent(src), "write")
        need(parent(dst), "write")
        need(src, "write", True)
        need(dst, "write", True)
    else:
        path = normalize(args[0])
        for a in ancestors(path):
            need(a, "read")
        if op in ("create", "mkdir"):
            need(parent(path), "write")
        elif op == "unlink":
            need(parent(path), "write")
            need(path, "write")
        elif op in ("write", "truncate"):
            need(path, "write")
        else:
            need(path, "read")
    return [(s, k, sub) for (s, sub), k in sorted(want.items())]


class LibFS:
    def __init__(self, sim: "Cluster", node: str, pid: str, index: int, uid: int = 0, gid: int = 0):
        self.sim = sim
        self.cfg = sim.cfg
        self.node = node
        self.pid = pid
        self.index = index
        self.uid, self.gid = uid, gid
        self.ep = Endpoint(node, pid)
        self.kfs_ep = Endpoint(node, "kernfs")
        self.alive = True
        self.cache_rid = f"{node}:cache:{pid}"
        sim.media.create_region(node, Tier.DRAM, self.cfg.sizes.read_cache, self.cache_rid)
        sim.net.register(self.ep, self.cache_rid)
        self.cache: OrderedDict[tuple[int, int], int] = OrderedDict()
        self.free_slots = list(range(self.cfg.sizes.read_cache // BLOCK - 1, -1, -1))
        self.logs: dict[str, LogHandle] = {}
        self.leases: dict[tuple[str, bool], str] = {}
        self.pins: Counter = Counter()
        self.meta: dict[int, Inode | None] = {}
        self.mcache: dict[int, Inode | None] = {}
        self.fresh: set[int] = set()
        self.fds: dict[int, FileHandle] = {}
        self.next_fd = 3
        self.counter = 0
        self.stats: Counter = Counter()
        self.last_provenance: list[str] = []
        self.completed = 0
        self.commit_points: list[int] = []
        self.acked_points: list[int] = []
        sim.net.bind(self.ep, self.dispatch)

    # -- plumbing -------------------------------------------------------------
    def dispatch(self, src: Endpoint, tag: str, payload: Any) -> Any:
        if tag == "REVOKE":
            return self.h_revoke(src, payload)
        raise ValueError(f"LibFS {self.pid} has no handler for {tag}")

    def crash(self) -> None:
        """The process dies: DRAM state is gone, the NVM log stays behind."""
        self.alive = False
        self.sim.net.unbind(self.ep)
        if self.cache_rid in self.sim.media.regions and self.node not in self.sim.media.down:
            self.sim.media.erase(self.cache_rid)

    def _subtree(self, path: str) -> str:
        return self.cfg.chain_for(path).subtree

    def _handle(self, path: str, create: bool = True) -> LogHandle | None:
        subtree = self._subtree(path)
        h = self.logs.get(subtree)
        if h is not None or not create:
            return h
        ci = sorted(self.cfg.chains).index(subtree)
        rid = f"{self.node}:log:{self.pid}:{ci}"
        self.sim.media.create_region(self.node, Tier.NVM, self.cfg.sizes.log_capacity, rid)
        log = UpdateLog(self.sim.media, rid, owner=self.pid, threshold=self.cfg.sizes.digest_threshold)
        log_id = f"{self.pid}.{ci}"
        if self.node in self.cfg.chains[subtree].members():
            self.sim.kernfs[self.node].attach(log_id, rid, True, self.uid, self.gid)
        h = LogHandle(log_id, log, self.node, self.ep, subtree, self.uid, self.gid,
                      coalesce=self.cfg.mode == "optimistic" and self.cfg.coalesce)
        self.logs[subtree] = h
        self.sim.register_log(self, h, rid)
        return h

    # -- leases ---------------------------------------------------------------
    def _holding(self, scope: str, kind: str, sub: bool) -> tuple[str, bool] | None:
        k = self.leases.get((scope, sub))
        if k is not None and (k == "write" or kind == "read"):
            return (scope, sub)
        for (s, ssub), k in self.leases.items():
            if ssub and is_under(scope, s) and (k == "write" or kind == "read"):
                return (s, ssub)
        return None

    def prepare(self, op: str, *args) -> Prepared:
        """Take and pin every lease ``op`` needs. Raises LeaseBusy (nothing stays pinned)."""
        pins: list[tuple[str, bool]] = []
        if op in ("close", "fsync", "dsync", "evict"):
            return Prepared(op, args, pins)
        try:
            for scope, kind, sub in lease_requests(op, args):
                key = self._holding(scope, kind, sub)
                if key is None:
                    reply = self.sim.net.rpc(self.ep, self.kfs_ep, "ACQUIRE",
                                             {"scope": scope, "kind": kind, "sub": sub, "holder": self.pid,
                                              "hnode": self.node})
                    if "busy" in reply:
                        bscope, bholder, retry = reply["busy"]
                        raise LeaseBusy(bscope, bholder, retry)
                    key = (scope, sub)
                    self.leases[key] = kind
                    self.stats["lease_acquires"] += 1
                self.pins[key] += 1
                pins.append(key)
        except LeaseBusy:
            self._unpin(pins)
            raise
        return Prepared(op, args, pins)

    def _unpin(self, pins: list[tuple[str, bool]]) -> None:
        for key in pins:
            self.pins[key] -= 1
            if self.pins[key] <= 0:
                del self.pins[key]

    def execute(self, prep: Prepared) -> Any:
        try:
            try:
                result = getattr(self, "_op_" + prep.op)(*prep.args)
            except FsError:
                # a refused mutation is still a completed operation of the history
                if prep.op in MUTATING:
                    self.completed += 1
                raise
            if prep.op in MUTATING:
                self.completed += 1
            return result
        finally:
            self._unpin(prep.pins)
            if self.cfg.single_manager and prep.op not in ("close", "fsync", "dsync", "evict"):
                self._release_all()

    def call(self, op: str, *args) -> Any:
        return self.execute(self.prepare(op, *args))

    def apply(self, op: str, *args) -> tuple[str, Any]:
        """Run ``op`` and report ``("ok", value)`` or ``("err", errno-name)`` like the model."""
        try:
            return "ok", self.call(op, *args)
        except FsError as e:
            return "err", e.errno.value

    def _release_all(self) -> None:
        """Single-manager mode: leases are handed back after every operation."""
        if any(k == "write" for k in self.leases.values()):
            self.evict("lease-release")
        for (scope, sub) in sorted(self.leases):
            self.sim.net.rpc(self.ep, self.kfs_ep, "RELEASE",
                             {"scope": scope, "sub": sub, "holder": self.pid, "local": True})
        self.leases.clear()
        self._invalidate_all()

    def h_revoke(self, src: Endpoint, p: dict) -> bool:
        key = (p["scope"], p["subtree"])
        kind = self.leases.get(key)
        if kind is None:
            return True
        if self.pins.get(key):
            return False
        if kind == "write":
            self.evict("lease-revoke")
        del self.leases[key]
        self._invalidate_all()
        self.stats["revoked"] += 1
        return True

    # -- caches -----------------------------------------------------------------
    def _invalidate_all(self) -> None:
        self.cache.clear()
        self.free_slots = list(range(self.cfg.sizes.read_cache // BLOCK - 1, -1, -1))
        self.mcache.clear()

    def _invalidate_inode(self, ino: int) -> None:
        for key in [k for k in self.cache if k[0] == ino]:
            self.free_slots.append(self.cache.pop(key))
        self.mcache.pop(ino, None)

    def _slot(self, key: tuple[int, int]) -> int:
        if key in self.cache:
            self.cache.move_to_end(key)
            return self.cache[key]
        if not self.free_slots:
            _, slot = self.cache.popitem(last=False)
            self.free_slots.append(slot)
        slot = self.free_slots.pop()
        self.cache[key] = slot
        return slot

    def _cache_put(self, key: tuple[int, int], data: bytes) -> None:
        slot = self._slot(key)
        self.sim.media.store(self.cache_rid, slot * BLOCK, data)

    # -- metadata ---------------------------------------------------------------
    def _view(self, path: str) -> str:
        """Node whose shared area serves ``path``: this node if it replicates it."""
        chain = self.sim.active_chain(self._subtree(path), self.node)
        if self.node in chain:
            return self.node
        if not chain:
            raise FsError(Errno.ESTALE, path)
        return chain[0]

    def _inode(self, ino: int, path: str) -> Inode | None:
        if ino in self.meta:
            return self.meta[ino]
        view = self._view(path)
        if view == self.node:
            self.sim.clock.advance(self.cfg.latency.read_ns("nvm_local", 64))
            return self.sim.kernfs[self.node].inodes.get(ino)
        if ino in self.mcache:
            return self.mcache[ino]
        j = self.sim.net.rpc(self.ep, Endpoint(view, "kernfs"), "FETCH_INODE", {"ino": ino})
        n = Inode.from_json(ino, j) if j is not None else None
        self.mcache[ino] = n
        return n

    def _walk(self, path: str) -> int | None:
        """Inode of ``path``; None if the last component is missing. Raises on a bad parent."""
        ino = ROOT_INO
        walked = "/"
        comps = split(path)
        for i, comp in enumerate(comps):
            node = self._inode(ino, walked)
            if node is None:
                raise FsError(Errno.ENOENT, path)
            if node.kind != "dir":
                raise FsError(Errno.ENOTDIR, path)
            child = node.entries.get(comp)
            walked = walked.rstrip("/") + "/" + comp
            if child is None:
                if i == len(comps) - 1:
                    return None
                raise FsError(Errno.ENOENT, path)
            ino = child
        return ino

    def _lookup(self, path: str) -> tuple[int, Inode]:
        ino = self._walk(path)
        node = self._inode(ino, path) if ino is not None else None
        if node is None:
            raise FsError(Errno.ENOENT, path)
        return ino, node

    def _parent_dir(self, path: str) -> tuple[int, Inode]:
        par = parent(path)
        ino = self._walk(par)
        node = self._inode(ino, par) if ino is not None else None
        if node is None:
            raise FsError(Errno.ENOENT, path)
        if node.kind != "dir":
            raise FsError(Errno.ENOTDIR, path)
        return ino, node

    def _mut(self, ino: int, path: str) -> Inode:
        if ino not in self.meta:
            cur = self._inode(ino, path)
            self.meta[ino] = cur.copy() if cur is not None else None
        return self.meta[ino]

    def _new_ino(self) -> int:
        self.counter += 1
        return ((self.index + 1) << 32) | self.counter

    # -- logging ----------------------------------------------------------------
    def _append(self, path: str, entries: list[tuple[OpKind, int, int, bytes]]) -> None:
        """Append one operation's entries; the last one carries the op-end flag."""
        h = self._handle(path)
        total = sum(64 + len(p) for _, _, _, p in entries)
        if h.log.needs_digest(total) and h.log.has_pending():
            self.evict("log-threshold")
        now = self.sim.clock.now
        for i, (op, ino, off, payload) in enumerate(entries):
            if not h.log.has_room(64 + len(payload)):
                self.evict("log-threshold")
            h.log.append(op, ino, off, payload, now, flags=OP_END if i == len(entries) - 1 else 0)
            self.sim.clock.advance(self.cfg.latency.write_ns("nvm_local", 64 + len(payload)))
        self.stats["appended_bytes"] += total

    def _commit(self, h: LogHandle) -> bool:
        if h.log.tail_seq > h.log.last_commit_seq:
            h.log.append_commit(self.sim.clock.now)
            if not self.commit_points or self.commit_points[-1] != self.completed:
                self.commit_points.append(self.completed)
            return True
        return False

    def evict(self, trigger: str = "explicit") -> None:
        """Replicate and digest every log along its chain, then drop private caches."""
        busy = False
        for subtree in sorted(self.logs):
            h = self.logs[subtree]
            self._commit(h)
            if h.log.has_pending():
                busy = True
                chain_evict(self.sim, h)
        if busy:
            self.stats["evictions_" + trigger] += 1
        self.meta.clear()
        self.fresh.clear()
        self._invalidate_all()

    # -- data path --------------------------------------------------------------
    def _lower_block(self, ino: int, blk: int, path: str, lo: int, hi: int) -> tuple[bytes, str]:
        key = (ino, blk)
        sim = self.sim
        if key in self.cache:
            self.cache.move_to_end(key)
            return sim.media.read(self.cache_rid, self.cache[key] * BLOCK, BLOCK), "dram-cache"
        view = self._view(path)
        if view == self.node:
            kfs = sim.kernfs[self.node]
            loc = kfs.block_loc(ino, blk)
            if loc is not None and loc[0] == "ssd" and key not in kfs.l3:
                return self._cold_block(kfs, ino, blk, path)
            data, where = kfs.read_block(ino, blk)
            if where not in ("local-nvm", "hole"):
                self._cache_put(key, data)
            return data, where
        slot = self._slot(key)
        remote = sim.kernfs[view]
        loc = remote.block_loc(ino, blk)
        data = sim.net.read_into_requester_cache(self.ep, Endpoint(view, "kernfs"), self.cache_rid, slot * BLOCK,
                                                 {"ino": ino, "blk": blk}, lo, hi)
        if data is None:
            self.free_slots.append(self.cache.pop(key))
            return ZERO, "hole"
        if loc is None:
            return data, "hole"
        return data, "remote-ssd" if loc[0] == "ssd" and key not in remote.l3 else "remote-nvm"

    def _cold_block(self, kfs, ino: int, blk: int, path: str) -> tuple[bytes, str]:
        """Local block is on SSD: ask the reserve's NVM and read SSD in parallel; reserve wins."""
        sim = self.sim
        clock = sim.clock
        reserve = sim.live_reserve(self._subtree(path))
        start = clock.now
        hit = None
        t_res = start
        if reserve is not None and reserve != self.node:
            try:
                hit = sim.net.rpc(self.ep, Endpoint(reserve, "kernfs"), "READ", {"ino": ino, "blk": blk, "l3_only": True})
            except Exception:
                hit = None
            t_res = clock.now
            clock.now = start
        if hit is not None:
            clock.now = max(start, t_res)
            self._cache_put((ino, blk), hit)
            return hit, "reserve-nvm"
        nblk = max(1, self.cfg.sizes.prefetch_cold // BLOCK)
        ext = kfs.read_extent(ino, blk, nblk)
        clock.now = max(clock.now, t_res)
        for b, data in ext.items():
            self._cache_put((ino, b), data)
        if kfs.warming:
            kfs.warm_extent(ino, ext)
        return ext.get(blk, ZERO), "local-ssd"

    def _read_block(self, ino: int, blk: int, path: str, lo: int, hi: int) -> tuple[bytes, str]:
        h = self._handle(path, create=False)
        a, b = blk * BLOCK + lo, blk * BLOCK + hi
        pend = [t for t in (h.log.pending_for(ino) if h else ())
                if (t[3] is OpKind.TRUNCATE and t[1] < b) or (t[3] is OpKind.WRITE and t[1] < b and t[1] + t[2] > a)]
        uncovered = [(a, b)]
        for seq, off, length, op in reversed(pend):
            end = off + length if op is OpKind.WRITE else 1 << 62
            nxt = []
            for x, y in uncovered:
                if end <= x or off >= y:
                    nxt.append((x, y))
                    continue
                if x < off:
                    nxt.append((x, off))
                if end < y:
                    nxt.append((end, y))
            uncovered = nxt
            if not uncovered:
                break
        if uncovered and ino not in self.fresh:
            base, where = self._lower_block(ino, blk, path, lo, hi)
        else:
            base, where = ZERO, "private-log"
        if not pend:
            return base, where
        buf = bytearray(base)
        lo_abs = blk * BLOCK
        for seq, off, length, op in pend:
            if op is OpKind.TRUNCATE:
                cut = max(off - lo_abs, 0)
                if cut < BLOCK:
                    buf[cut:] = bytes(BLOCK - cut)
                continue
            e = h.log.entry(seq)
            s = max(off, lo_abs)
            t = min(off + length, lo_abs + BLOCK)
            buf[s - lo_abs : t - lo_abs] = e.payload[s - off : t - off]
        return bytes(buf), where if uncovered and ino not in self.fresh else "private-log"

    def _read_range(self, ino: int, node: Inode, path: str, offset: int, length: int) -> bytes:
        end = min(node.size, offset + length)
        if offset >= end:
            self.last_provenance = []
            return b""
        out = bytearray()
        prov = []
        for blk in range(offset // BLOCK, -(-end // BLOCK)):
            lo = max(offset - blk * BLOCK, 0)
            hi = min(end - blk * BLOCK, BLOCK)
            data, where = self._read_block(ino, blk, path, lo, hi)
            out += data[lo:hi]
            prov.append(where)
            self.stats["read_" + where] += 1
        self.last_provenance = prov
        return bytes(out)

    # -- POSIX operations (path based; fd variants below) ---------------------------
    def _op_create(self, path: str, mode: int = 0o644) -> None:
        path = normalize(path)
        pino, pnode = self._parent_dir(path)
        name = basename(path)
        if not name or name in pnode.entries:
            raise FsError(Errno.EEXIST, path)
        if not may_write(pnode, self.uid, self.gid):
            raise FsError(Errno.EACCES, path)
        ino = self._new_ino()
        self._append(path, [(OpKind.CREATE, ino, 0,
                             meta_payload(parent=pino, name=name, mode=mode, uid=self.uid, gid=self.gid))])
        now = self.sim.clock.now
        self.meta[ino] = Inode(ino, "file", mode, self.uid, self.gid, 0, now, now)
        self._mut(pino, parent(path)).entries[name] = ino
        self.fresh.add(ino)

    def _op_mkdir(self, path: str, mode: int = 0o755) -> None:
        path = normalize(path)
        pino, pnode = self._parent_dir(path)
        name = basename(path)
        if not name or name in pnode.entries:
            raise FsError(Errno.EEXIST, path)
        if not may_write(pnode, self.uid, self.gid):
            raise FsError(Errno.EACCES, path)
        ino = self._new_ino()
        self._append(path, [(OpKind.MKDIR, ino, 0,
                             meta_payload(parent=pino, name=name, mode=mode, uid=self.uid, gid=self.gid))])
        now = self.sim.clock.now
        self.meta[ino] = Inode(ino, "dir", mode, self.uid, self.gid, 0, now, now)
        self._mut(pino, parent(path)).entries[name] = ino
        self.fresh.add(ino)

    def _file(self, path: str) -> tuple[int, Inode]:
        ino, node = self._lookup(path)
        if node.kind == "dir":
            raise FsError(Errno.EISDIR, path)
        return ino, node

    def _op_write(self, path: str, offset: int, data: bytes) -> int:
        path = normalize(path)
        ino, node = self._file(path)
        if not may_write(node, self.uid, self.gid):
            raise FsError(Errno.EACCES, path)
        data = bytes(data)
        chunks = []
        pos = 0
        while pos < len(data) or not chunks:
            n = min(WRITE_CHUNK, len(data) - pos)
            chunks.append((OpKind.WRITE, ino, offset + pos, data[pos : pos + n]))
            pos += n
            if n == 0:
                break
        self._append(path, chunks)
        m = self._mut(ino, path)
        m.size = max(m.size, offset + len(data))
        m.mtime = m.ctime = self.sim.clock.now
        self._invalidate_inode_cache_only(ino)
        return len(data)

    def _invalidate_inode_cache_only(self, ino: int) -> None:
        for key in [k for k in self.cache if k[0] == ino]:
            self.free_slots.append(self.cache.pop(key))

    def _op_read(self, path: str, offset: int, length: int) -> bytes:
        path = normalize(path)
        ino, node = self._file(path)
        if not may_read(node, self.uid, self.gid):
            raise FsError(Errno.EACCES, path)
        return self._read_range(ino, node, path, offset, length)

    def _op_truncate(self, path: str, size: int) -> None:
        path = normalize(path)
        ino, node = self._file(path)
        if not may_write(node, self.uid, self.gid):
            raise FsError(Errno.EACCES, path)
        self._append(path, [(OpKind.TRUNCATE, ino, size, b"")])
        m = self._mut(ino, path)
        m.size = size
        m.mtime = m.ctime = self.sim.clock.now
        self._invalidate_inode_cache_only(ino)

    def _op_unlink(self, path: str) -> None:
        path = normalize(path)
        if path == "/":
            raise FsError(Errno.ENOENT, path)
        pino, pnode = self._parent_dir(path)
        name = basename(path)
        ino = pnode.entries.get(name)
        if ino is None:
            raise FsError(Errno.ENOENT, path)
        node = self._inode(ino, path)
        if node is None:
            raise FsError(Errno.ENOENT, path)
        if node.kind == "dir" and node.entries:
            raise FsError(Errno.ENOTEMPTY, path)
        if not may_write(pnode, self.uid, self.gid):
            raise FsError(Errno.EACCES, path)
        self._append(path, [(OpKind.UNLINK, ino, 0, meta_payload(parent=pino, name=name))])
        del self._mut(pino, parent(path)).entries[name]
        self.meta[ino] = None
        self._invalidate_inode(ino)

    def _op_rename(self, src: str, dst: str) -> None:
        src, dst = normalize(src), normalize(dst)
        spino, spnode = self._parent_dir(src)
        dpino, dpnode = self._parent_dir(dst)
        sname, dname = basename(src), basename(dst)
        ino = spnode.entries.get(sname) if src != "/" else None
        node = self._inode(ino, src) if ino is not None else None
        if node is None:
            raise FsError(Errno.ENOENT, src)
        if src == dst:
            return None
        if node.kind == "dir" and is_under(dst, src):
            raise FsError(Errno.EINVAL, dst)
        victim = dpnode.entries.get(dname)
        if victim is not None:
            vnode = self._inode(victim, dst)
            if node.kind == "dir" and vnode.kind != "dir":
                raise FsError(Errno.ENOTDIR, dst)
            if vnode.kind == "dir" and node.kind != "dir":
                raise FsError(Errno.EISDIR, dst)
            if vnode.kind == "dir" and vnode.entries:
                raise FsError(Errno.ENOTEMPTY, dst)
        if self._subtree(src) != self._subtree(dst) or (node.kind == "dir" and src in self.cfg.chains):
            raise FsError(Errno.EXDEV, dst)
        if not (may_write(spnode, self.uid, self.gid) and may_write(dpnode, self.uid, self.gid)):
            raise FsError(Errno.EACCES, src)
        m = {"sp": spino, "sn": sname, "dp": dpino, "dn": dname}
        if victim is not None:
            m["victim"] = victim
        self._append(src, [(OpKind.RENAME, ino, 0, meta_payload(**m))])
        now = self.sim.clock.now
        sp = self._mut(spino, parent(src))
        del sp.entries[sname]
        sp.mtime = sp.ctime = now
        dp = self._mut(dpino, parent(dst))
        dp.entries[dname] = ino
        dp.mtime = dp.ctime = now
        if victim is not None:
            self.meta[victim] = None
            self._invalidate_inode(victim)
        return None

    def _op_readdir(self, path: str) -> tuple:
        path = normalize(path)
        ino, node = self._lookup(path)
        if node.kind != "dir":
            raise FsError(Errno.ENOTDIR, path)
        return tuple(sorted(node.entries))

    def _op_stat(self, path: str) -> tuple:
        path = normalize(path)
        ino, node = self._lookup(path)
        return ("dir", 0) if node.kind == "dir" else ("file", node.size)

    def _op_open(self, path: str) -> int:
        path = normalize(path)
        ino, node = self._lookup(path)
        fd = self.next_fd
        self.next_fd += 1
        self.fds[fd] = FileHandle(self.pid, ino, path)
        return fd

    def _op_close(self, fd: int) -> None:
        fh = self.fds.pop(fd, None)
        if fh is None:
            raise FsError(Errno.EBADF, str(fd))
        self._invalidate_inode(fh.ino)

    def _op_fsync(self) -> None:
        if self.cfg.mode == "optimistic":
            return None
        self._sync()

    def _op_dsync(self) -> None:
        self._sync()

    def _op_evict(self) -> None:
        self.evict("explicit")

    def _sync(self) -> None:
        for subtree in sorted(self.logs):
            h = self.logs[subtree]
            self._commit(h)
            if h.log.last_commit_seq > h.log.replicated_seq:
                replicate(self.sim, h)
        self.acked_points.append(self.completed)
        self.stats["syncs"] += 1

    # -- public POSIX surface -----------------------------------------------------
    def create(self, path: str, mode: int = 0o644) -> int:
        self.call("create", path, mode)
        return self.open(path)

    def open(self, path: str) -> int:
        return self.call("open", path)

    def close(self, fd: int) -> None:
        self.call("close", fd)

    def _fh(self, fd: int) -> FileHandle:
        fh = self.fds.get(fd)
        if fh is None:
            raise FsError(Errno.EBADF, str(fd))
        return fh

    def read(self, fd: int, length: int) -> bytes:
        fh = self._fh(fd)
        data = self.call("read", fh.path, fh.offset, length)
        fh.offset += len(data)
        return data

    def write(self, fd: int, data: bytes) -> int:
        fh = self._fh(fd)
        n = self.call("write", fh.path, fh.offset, data)
        fh.offset += n
        return n

    def pread(self, fd: int, offset: int, length: int) -> bytes:
        return self.call("read", self._fh(fd).path, offset, length)

    def pwrite(self, fd: int, offset: int, data: bytes) -> int:
        return self.call("write", self._fh(fd).path, offset, data)

    def fsync(self, fd: int | None = None) -> None:
        self.call("fsync")

    def dsync(self) -> None:
        self.call("dsync")

    def unlink(self, path: str) -> None:
        self.call("unlink", path)

    def rename(self, src: str, dst: str) -> None:
        self.call("rename", src, dst)

    def mkdir(self, path: str, mode: int = 0o755) -> None:
        self.call("mkdir", path, mode)

    def readdir(self, path: str) -> tuple:
        return self.call("readdir", path)

    def stat(self, path: str) -> tuple:
        return self.call("stat", path)

    def truncate(self, path: str, size: int) -> None:
        self.call("truncate", path, size)
