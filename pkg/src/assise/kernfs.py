"""Per-node daemon: shared cache area, digest service, journal and epoch bitmaps.

Shared-area layout
------------------
Metadata (inodes, directory entries, block maps, digest cursors, epoch
bitmaps) is kept in DRAM and made durable through an append-only journal of
framed JSON records in NVM. File data lives in 4KB blocks in two regions per
node: ``<node>:nvm`` and ``<node>:ssd``.

* cache replica: digests write into NVM; the LRU tail migrates to SSD.
* reserve replica: digests write into SSD; its NVM holds a third-level copy
  of blocks that cache replicas have already pushed out of their NVM.

Digests are copy-on-write: new block images are written to fresh blocks and
fenced, then one journal record commits the whole transaction batch. A crash
before that record leaves the previous state intact; recovery replays the
journal and digests again from the recorded cursor.

Journal record framing: ``<IIQI4x`` (magic, body length, seq, CRC32C of the
body) followed by the JSON body.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Iterable

from .crc import crc32c
from .errors import (CapacityExceeded, ChecksumError, Errno, FsError, LogFull, NodeFailed,
                     PermissionDenied)
from .media import Media, Tier
from .oplog import (DATA_START, ROOT_INO, LogEntry, OpKind, TxnBatch, UpdateLog, batches,
                    complete_batches, scan)
from .posix import tree_hash
from .simnet import Endpoint

if TYPE_CHECKING:
    from .cluster import Cluster

BLOCK = 4096
FRAME = struct.Struct("<IIQI4x")
FRAME_MAGIC = 0x4C4E524A
ZERO_BLOCK = bytes(BLOCK)


class RecordLog:
    """Append-only framed JSON records in one NVM region."""

    def __init__(self, media: Media, rid: str, replicate: Callable[[int, bytes], None] | None = None):
        self.media = media
        self.rid = rid
        self.off = 0
        self.seq = 0
        self.replicate = replicate

    @staticmethod
    def encode(seq: int, rec: dict) -> bytes:
        body = json.dumps(rec, sort_keys=True, separators=(",", ":")).encode()
        return FRAME.pack(FRAME_MAGIC, len(body), seq, crc32c(body)) + body

    def append(self, rec: dict, fence: bool = True) -> int:
        blob = self.encode(self.seq + 1, rec)
        cap = self.media.region(self.rid).capacity
        if self.off + len(blob) > cap:
            raise LogFull(f"record log {self.rid} is full")
        off = self.off
        self.media.write_persistent(self.rid, off, blob)
        if fence:
            self.media.fence(self.rid)
        self.off += len(blob)
        self.seq += 1
        if self.replicate is not None:
            self.replicate(off, blob)
        return off

    @staticmethod
    def read_all(media: Media, rid: str) -> tuple[list[dict], int, int]:
        """Valid records in order plus the end offset and last seq."""
        cap = media.region(rid).capacity
        out, off, seq = [], 0, 0
        while off + FRAME.size <= cap:
            magic, length, s, crc = FRAME.unpack(media.read(rid, off, FRAME.size, charge=False))
            if magic != FRAME_MAGIC or s != seq + 1 or off + FRAME.size + length > cap:
                break
            body = media.read(rid, off + FRAME.size, length, charge=False)
            if crc32c(body) != crc:
                break
            out.append(json.loads(body))
            off += FRAME.size + length
            seq = s
        return out, off, seq

    @classmethod
    def reopen(cls, media: Media, rid: str, replicate=None) -> tuple["RecordLog", list[dict]]:
        recs, off, seq = cls.read_all(media, rid)
        log = cls(media, rid, replicate)
        log.off, log.seq = off, seq
        return log, recs


class Allocator:
    """Lowest-free-first block allocator (deterministic)."""

    def __init__(self, nblocks: int):
        self.nblocks = nblocks
        self.next = 0
        self.free_heap: list[int] = []
        self.used = 0

    def alloc(self) -> int:
        if self.free_heap:
            self.used += 1
            return heapq.heappop(self.free_heap)
        if self.next >= self.nblocks:
            raise FsError(Errno.ENOSPC)
        self.next += 1
        self.used += 1
        return self.next - 1

    def free(self, pblk: int) -> None:
        heapq.heappush(self.free_heap, pblk)
        self.used -= 1

    @property
    def available(self) -> int:
        return self.nblocks - self.used

    @classmethod
    def rebuild(cls, nblocks: int, used: Iterable[int]) -> "Allocator":
        a = cls(nblocks)
        used = set(used)
        a.next = max(used) + 1 if used else 0
        a.free_heap = [b for b in range(a.next) if b not in used]
        heapq.heapify(a.free_heap)
        a.used = len(used)
        return a


@dataclass
class Inode:
    ino: int
    kind: str
    mode: int = 0o644
    uid: int = 0
    gid: int = 0
    size: int = 0
    mtime: int = 0
    ctime: int = 0
    entries: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> list:
        return [self.kind, self.mode, self.uid, self.gid, self.size, self.mtime, self.ctime, self.entries]

    @classmethod
    def from_json(cls, ino: int, j: list) -> "Inode":
        kind, mode, uid, gid, size, mtime, ctime, entries = j
        return cls(int(ino), kind, mode, uid, gid, size, mtime, ctime, {k: int(v) for k, v in entries.items()})

    def copy(self) -> "Inode":
        return Inode(self.ino, self.kind, self.mode, self.uid, self.gid, self.size, self.mtime, self.ctime,
                     dict(self.entries))


def may_write(ino: Inode, uid: int, gid: int) -> bool:
    if uid == 0:
        return True
    if ino.uid == uid:
        return bool(ino.mode & 0o200)
    if ino.gid == gid:
        return bool(ino.mode & 0o020)
    return bool(ino.mode & 0o002)


def may_read(ino: Inode, uid: int, gid: int) -> bool:
    if uid == 0:
        return True
    if ino.uid == uid:
        return bool(ino.mode & 0o400)
    if ino.gid == gid:
        return bool(ino.mode & 0o040)
    return bool(ino.mode & 0o004)


@dataclass
class LogSource:
    """A log this node digests: a local process log or a mirror of a remote one."""

    log_id: str
    rid: str
    local: bool
    uid: int
    gid: int
    seq: int = 0
    off: int = DATA_START


class _Overlay:
    """Copy-on-write view of the shared area while a batch is being applied."""

    def __init__(self, kfs: "KernFS"):
        self.kfs = kfs
        self.inodes: dict[int, Inode | None] = {}
        self.data: dict[tuple[int, int], bytearray] = {}
        self.dropped: dict[int, set[int]] = {}
        self.touched: set[int] = set()

    def get(self, ino: int) -> Inode | None:
        if ino in self.inodes:
            return self.inodes[ino]
        return self.kfs.inodes.get(ino)

    def mut(self, ino: int) -> Inode | None:
        if ino not in self.inodes:
            cur = self.kfs.inodes.get(ino)
            self.inodes[ino] = cur.copy() if cur is not None else None
        return self.inodes[ino]

    def block(self, ino: int, blk: int) -> bytearray:
        key = (ino, blk)
        if key not in self.data:
            if blk in self.dropped.get(ino, ()):
                self.data[key] = bytearray(BLOCK)
            else:
                self.data[key] = bytearray(self.kfs.block_bytes(ino, blk))
        return self.data[key]

    def delete(self, ino: int) -> None:
        self.inodes[ino] = None
        for key in [k for k in self.data if k[0] == ino]:
            del self.data[key]
        self.touched.add(ino)

    def apply(self, e: LogEntry) -> None:
        op, ino = e.op, e.inode
        self.touched.add(ino)
        if op in (OpKind.CREATE, OpKind.MKDIR):
            m = e.meta
            node = self.get(ino)
            if node is None:
                node = Inode(ino, "dir" if op is OpKind.MKDIR else "file", m.get("mode", 0o644), m.get("uid", 0),
                             m.get("gid", 0), 0, e.time, e.time)
                self.inodes[ino] = node
            p = self.mut(m["parent"])
            if p is not None:
                p.entries[m["name"]] = ino
                p.mtime = p.ctime = e.time
                self.touched.add(p.ino)
        elif op is OpKind.UNLINK:
            m = e.meta
            p = self.mut(m["parent"])
            if p is not None and p.entries.get(m["name"]) == ino:
                del p.entries[m["name"]]
                p.mtime = p.ctime = e.time
                self.touched.add(p.ino)
            if self.get(ino) is not None:
                self.delete(ino)
        elif op is OpKind.RENAME:
            m = e.meta
            sp = self.mut(m["sp"])
            if sp is not None and sp.entries.get(m["sn"]) == ino:
                del sp.entries[m["sn"]]
                sp.mtime = sp.ctime = e.time
                self.touched.add(sp.ino)
            dp = self.mut(m["dp"])
            if dp is not None:
                victim = dp.entries.get(m["dn"])
                if victim is not None and victim != ino and self.get(victim) is not None:
                    self.delete(victim)
                dp.entries[m["dn"]] = ino
                dp.mtime = dp.ctime = e.time
                self.touched.add(dp.ino)
        elif op is OpKind.WRITE:
            node = self.mut(ino)
            if node is None:
                return
            pos, data = e.offset, e.payload
            end = pos + len(data)
            while pos < end:
                blk, boff = divmod(pos, BLOCK)
                n = min(BLOCK - boff, end - pos)
                src = pos - e.offset
                if boff == 0 and n == BLOCK:
                    self.data[(ino, blk)] = bytearray(data[src : src + n])
                else:
                    self.block(ino, blk)[boff : boff + n] = data[src : src + n]
                pos += n
            node.size = max(node.size, end)
            node.mtime = node.ctime = e.time
        elif op is OpKind.TRUNCATE:
            node = self.mut(ino)
            if node is None:
                return
            size = e.offset
            if size < node.size:
                first_dead = -(-size // BLOCK)
                known = set(self.kfs.blocks.get(ino, {})) | {b for (i, b) in self.data if i == ino}
                for blk in sorted(b for b in known if b >= first_dead):
                    self.data.pop((ino, blk), None)
                    self.dropped.setdefault(ino, set()).add(blk)
                if size % BLOCK:
                    self.block(ino, size // BLOCK)[size % BLOCK :] = bytes(BLOCK - size % BLOCK)
            node.size = size
            node.mtime = node.ctime = e.time
        elif op is OpKind.SETATTR:
            node = self.mut(ino)
            if node is None:
                return
            for k, v in e.meta.items():
                setattr(node, k, v)
            node.ctime = e.time


class KernFS:
    """One per node. Talks to LibFSes and peers only through the network."""

    def __init__(self, sim: "Cluster", node: str, role: str = "cache", *, fresh: bool = True):
        self.sim = sim
        self.node = node
        self.role = role
        self.ep = Endpoint(node, "kernfs")
        self.media: Media = sim.media
        self.clock = sim.clock
        sz = sim.cfg.sizes
        self.nvm_rid = f"{node}:nvm"
        self.ssd_rid = f"{node}:ssd"
        self.journal_rid = f"{node}:journal"
        self.leaselog_rid = f"{node}:leaselog"
        if fresh:
            nvm_cap = sz.reserve_capacity if role == "reserve" else sz.hot_capacity
            self.media.create_region(node, Tier.NVM, nvm_cap, self.nvm_rid)
            self.media.create_region(node, Tier.SSD, sz.cold_capacity, self.ssd_rid)
            self.media.create_region(node, Tier.NVM, sz.journal_capacity, self.journal_rid)
            self.media.create_region(node, Tier.NVM, 64 * 1024 * 1024, self.leaselog_rid)
        self.regions = {"nvm": self.nvm_rid, "ssd": self.ssd_rid}
        self.inodes: dict[int, Inode] = {}
        self.blocks: dict[int, dict[int, tuple[str, int]]] = {}
        self.l3: dict[tuple[int, int], int] = {}
        self.lru: OrderedDict[tuple[int, int], None] = OrderedDict()
        self.shadow: OrderedDict[tuple[int, int], None] = OrderedDict()
        self.alloc = {t: Allocator(self.media.region(r).capacity // BLOCK) for t, r in self.regions.items()}
        self.sources: dict[str, LogSource] = {}
        self.bitmaps: dict[int, set[int]] = {}
        self.stale: set[int] = set()
        self.stale_peer: dict[int, str] = {}
        self.epoch = 0
        self.warming = False
        self.journal = RecordLog(self.media, self.journal_rid)
        self.stats = {"acked_bytes": 0, "digested_entries": 0, "digested_batches": 0, "bytes_read": 0, "bytes_written": 0,
                      "migrated": 0, "invalidated": 0, "fetched": 0, "aborted_batches": 0}
        from .coherence import LeaseManager

        self.lm = LeaseManager(self)
        self.handlers: dict[str, Callable[[Endpoint, Any], Any]] = {
            "CHAIN_STEP": self.h_chain_step,
            "EVICT": self.h_evict,
            "READ": self.h_read,
            "FETCH_INODE": self.h_fetch_inode,
            "FETCH_BLOCK": self.h_fetch_block,
            "BITMAPS": self.h_bitmaps,
            "MIRROR_ATTACH": self.h_mirror_attach,
            "MIRROR_RESET": self.h_mirror_reset,
            "HEARTBEAT": lambda src, p: "alive",
            "EPOCH": self.h_epoch,
            "RESIZE_PREPARE": self.h_resize_prepare,
            "RESIZE_COMMIT": self.h_resize_commit,
            "RESIZE_ABORT": self.h_resize_abort,
        }
        self.handlers.update(self.lm.handlers())
        self._resize_reserved: dict[str, int] = {}
        if fresh:
            self.inodes[ROOT_INO] = Inode(ROOT_INO, "dir", 0o777)
            rec = {"inodes": {str(ROOT_INO): self.inodes[ROOT_INO].to_json()}, "role": role}
            self.journal.append(rec)
        sim.net.bind(self.ep, self.dispatch)

    # -- plumbing --------------------------------------------------------------
    def dispatch(self, src: Endpoint, tag: str, payload: Any) -> Any:
        return self.handlers[tag](src, payload)

    def kfs_ep(self, node: str) -> Endpoint:
        return Endpoint(node, "kernfs")

    def rpc(self, node: str, tag: str, payload: Any = None) -> Any:
        return self.sim.net.rpc(self.ep, self.kfs_ep(node), tag, payload)

    # -- bootstrap -------------------------------------------------------------
    def make_root_dirs(self, roots: dict[str, int]) -> None:
        """Pre-create subtree roots (one directory per configured chain)."""
        rec: dict[str, Any] = {"inodes": {}}
        for path, ino in sorted(roots.items(), key=lambda kv: kv[1]):
            parts = [p for p in path.split("/") if p]
            par = self.inodes[ROOT_INO]
            for depth, name in enumerate(parts):
                last = depth == len(parts) - 1
                child = par.entries.get(name)
                if child is None:
                    if not last:
                        raise ValueError(f"parent of subtree root {path} must itself be a subtree root")
                    child = ino
                    par = par.copy()
                    par.entries[name] = child
                    self.inodes[par.ino] = par
                    self.inodes[child] = Inode(child, "dir", 0o777)
                    rec["inodes"][str(par.ino)] = par.to_json()
                    rec["inodes"][str(child)] = self.inodes[child].to_json()
                par = self.inodes[child]
        if rec["inodes"]:
            self.journal.append(rec)

    def attach(self, log_id: str, rid: str, local: bool, uid: int, gid: int) -> LogSource:
        src = LogSource(log_id, rid, local, uid, gid)
        self.sources[log_id] = src
        self.journal.append({"attach": [log_id, rid, local, uid, gid]})
        return src

    # -- journal ---------------------------------------------------------------
    def _install(self, rec: dict, replay: bool = False) -> None:
        for ino_s, meta in (rec.get("inodes") or {}).items():
            ino = int(ino_s)
            if meta is None:
                self.inodes.pop(ino, None)
                for blk, loc in self.blocks.pop(ino, {}).items():
                    self._release(ino, blk, loc, replay)
                for key in [k for k in self.l3 if k[0] == ino]:
                    pb = self.l3.pop(key)
                    if not replay:
                        self.alloc["nvm"].free(pb)
                self.stale.discard(ino)
            else:
                self.inodes[ino] = Inode.from_json(ino, meta)
        for ino_s, bmap in (rec.get("blocks") or {}).items():
            ino = int(ino_s)
            cur = self.blocks.setdefault(ino, {})
            for blk_s, loc in bmap.items():
                blk = int(blk_s)
                old = cur.pop(blk, None)
                if old is not None and (loc is None or tuple(loc) != old):
                    self._release(ino, blk, old, replay)
                if loc is not None:
                    cur[blk] = (loc[0], loc[1])
                    if loc[0] == "nvm":
                        self.lru[(ino, blk)] = None
                        self.lru.move_to_end((ino, blk))
                if (ino, blk) in self.l3:
                    # a newer primary copy supersedes the third-level one (or adopts its block)
                    pb = self.l3.pop((ino, blk))
                    adopted = loc is not None and loc[0] == "nvm" and loc[1] == pb
                    if not replay and not adopted:
                        self.alloc["nvm"].free(pb)
            if not cur:
                self.blocks.pop(ino, None)
        for ino, blk, pblk in rec.get("l3set", ()):
            self.l3[(ino, blk)] = pblk
        for ino, blk in rec.get("l3drop", ()):
            pb = self.l3.pop((ino, blk), None)
            if pb is not None and not replay:
                self.alloc["nvm"].free(pb)
        if "cursor" in rec:
            log_id, seq, off = rec["cursor"]
            if log_id in self.sources:
                self.sources[log_id].seq, self.sources[log_id].off = seq, off
        if "attach" in rec:
            log_id, rid, local, uid, gid = rec["attach"]
            self.sources[log_id] = LogSource(log_id, rid, local, uid, gid)
        if "detach" in rec:
            self.sources.pop(rec["detach"], None)
        if "bits" in rec:
            self.bitmaps.setdefault(rec["epoch"], set()).update(rec["bits"])
        for e in rec.get("bitmaps_drop", ()):
            self.bitmaps.pop(e, None)
        self.stale.update(rec.get("stale_add", ()))
        self.stale.difference_update(rec.get("stale_del", ()))
        if "role" in rec:
            self.role = rec["role"]
            self.warming = rec.get("warming", self.warming)

    def _release(self, ino: int, blk: int, loc: tuple[str, int], replay: bool) -> None:
        tier, pblk = loc
        if tier == "nvm":
            self.lru.pop((ino, blk), None)
        if not replay:
            self.alloc[tier].free(pblk)

    def commit(self, rec: dict) -> None:
        """Make ``rec`` durable, then apply it in memory."""
        self.journal.append(rec)
        self._install(rec)

    # -- block access ------------------------------------------------------------
    def block_loc(self, ino: int, blk: int) -> tuple[str, int] | None:
        return self.blocks.get(ino, {}).get(blk)

    def block_bytes(self, ino: int, blk: int, charge: bool = True) -> bytes:
        """Current contents of a block from whichever tier holds it (peer if stale)."""
        data, _ = self.read_block(ino, blk, charge=charge)
        return data

    def read_block(self, ino: int, blk: int, charge: bool = True, warm: bool = True) -> tuple[bytes, str]:
        loc = self.block_loc(ino, blk)
        if loc is None:
            if ino in self.stale:
                return self._fill_from_peer(ino, blk), "remote-nvm"
            return ZERO_BLOCK, "hole"
        tier, pblk = loc
        data = self.media.read(self.regions[tier], pblk * BLOCK, BLOCK, charge=charge)
        self.stats["bytes_read"] += BLOCK
        if tier == "nvm":
            if (ino, blk) in self.lru:
                self.lru.move_to_end((ino, blk))
            return data, "local-nvm"
        if (ino, blk) in self.l3:
            nv = self.media.read(self.nvm_rid, self.l3[(ino, blk)] * BLOCK, BLOCK, charge=charge)
            return nv, "local-nvm"
        if self.warming and warm:
            self._warm(ino, blk, data)
        return data, "local-ssd"

    def read_l3(self, ino: int, blk: int) -> bytes | None:
        """Third-level copy in this (reserve) node's NVM, if any."""
        pb = self.l3.get((ino, blk))
        if pb is not None:
            return self.media.read(self.nvm_rid, pb * BLOCK, BLOCK)
        loc = self.block_loc(ino, blk)
        if loc is not None and loc[0] == "nvm":
            return self.media.read(self.nvm_rid, loc[1] * BLOCK, BLOCK)
        return None

    def _warm(self, ino: int, blk: int, data: bytes) -> None:
        self._make_room(1)
        pblk = self.alloc["nvm"].alloc()
        self.media.write_persistent(self.nvm_rid, pblk * BLOCK, data)
        self.media.fence(self.nvm_rid)
        self.commit({"blocks": {str(ino): {str(blk): ["nvm", pblk]}}})

    def warm_extent(self, ino: int, ext: dict[int, bytes]) -> None:
        """Copy blocks just read from SSD into NVM (promoted reserve warming up)."""
        for blk in sorted(ext):
            loc = self.block_loc(ino, blk)
            if loc is not None and loc[0] == "ssd" and (ino, blk) not in self.l3:
                self._warm(ino, blk, ext[blk])

    def _fill_from_peer(self, ino: int, blk: int) -> bytes:
        peer = self.stale_peer.get(ino)
        if peer is None or not self.sim.is_alive(peer):
            peer = self.sim.fresh_peer(self.node)
        if peer is None:
            raise FsError(Errno.ESTALE, f"inode {ino}")
        data = self.rpc(peer, "FETCH_BLOCK", {"ino": ino, "blk": blk})
        self.stats["fetched"] += 1
        if data is None:
            return ZERO_BLOCK
        tier = "ssd" if self.role == "reserve" else "nvm"
        if tier == "nvm":
            self._make_room(1)
        pblk = self.alloc[tier].alloc()
        self.media.write_persistent(self.regions[tier], pblk * BLOCK, data)
        self.media.fence(self.regions[tier])
        self.commit({"blocks": {str(ino): {str(blk): [tier, pblk]}}})
        return data

    def read_extent(self, ino: int, first_blk: int, nblocks: int) -> dict[int, bytes]:
        """Sequential cold read used for SSD prefetch; one charged IO."""
        out = {}
        total = 0
        for blk in range(first_blk, first_blk + nblocks):
            loc = self.block_loc(ino, blk)
            if loc is None or loc[0] != "ssd":
                continue
            out[blk] = self.media.read(self.ssd_rid, loc[1] * BLOCK, BLOCK, charge=False)
            total += BLOCK
        if total:
            self.clock.advance(self.sim.cfg.latency.read_ns("ssd", total))
        return out

    # -- digest ------------------------------------------------------------------
    def pending_entries(self, log_id: str, through_seq: int | None = None) -> list[LogEntry]:
        src = self.sources[log_id]
        ents = scan(self.media, src.rid, src.off, src.seq, contiguous=src.local, charge=True)
        ents = complete_batches(ents)
        if through_seq is not None:
            ents = [e for e in ents if e.seq <= through_seq]
            while ents and ents[-1].op is not OpKind.COMMIT:
                ents.pop()
        return ents

    def digest_log(self, log_id: str, through_seq: int | None = None) -> dict:
        """Digest complete batches of ``log_id`` (up to ``through_seq``)."""
        if log_id not in self.sources:
            return {"seq": 0, "batches": 0, "aborted": False}
        src = self.sources[log_id]
        ents = self.pending_entries(log_id, through_seq)
        ends = {e.seq: e.pos + e.size for e in ents if e.op is OpKind.COMMIT}
        done = aborted = 0
        err = ""
        for b in batches(ents):
            try:
                self.apply_batch(b, src, ends[b.last_seq])
            except (PermissionDenied, ChecksumError) as exc:
                self.stats["aborted_batches"] += 1
                aborted, err = 1, str(exc)
                break
            done += 1
        return {"seq": src.seq, "batches": done, "aborted": bool(aborted), "error": err}

    def check_permission(self, ov: _Overlay, e: LogEntry, uid: int, gid: int) -> None:
        if uid == 0:
            return
        if e.op in (OpKind.WRITE, OpKind.TRUNCATE, OpKind.SETATTR):
            targets = [e.inode]
        elif e.op in (OpKind.CREATE, OpKind.MKDIR, OpKind.UNLINK):
            targets = [e.meta["parent"]]
        elif e.op is OpKind.RENAME:
            targets = [e.meta["sp"], e.meta["dp"]]
        else:
            targets = []
        for t in targets:
            node = ov.get(t)
            if node is not None and not may_write(node, uid, gid):
                raise PermissionDenied(f"uid {uid} may not modify inode {t} (seq {e.seq})")
        if e.op is OpKind.SETATTR:
            node = ov.get(e.inode)
            if node is not None and node.uid != uid:
                raise PermissionDenied(f"uid {uid} does not own inode {e.inode}")

    def apply_batch(self, batch: TxnBatch, src: LogSource, end_off: int) -> None:
        """Apply one transaction batch atomically (copy-on-write, one commit record)."""
        ov = _Overlay(self)
        for e in batch.entries:
            self.check_permission(ov, e, src.uid, src.gid)
            ov.apply(e)
        tier = "ssd" if self.role == "reserve" else "nvm"
        live = {k: v for k, v in ov.data.items() if ov.get(k[0]) is not None}
        if tier == "nvm":
            self._make_room(len(live))
        block_updates: dict[str, dict[str, Any]] = {}
        for (ino, blk), data in sorted(live.items()):
            pblk = self.alloc[tier].alloc()
            self.media.write_persistent(self.regions[tier], pblk * BLOCK, bytes(data))
            block_updates.setdefault(str(ino), {})[str(blk)] = [tier, pblk]
        for ino, blks in ov.dropped.items():
            if ov.get(ino) is None:
                continue
            for blk in blks:
                if (ino, blk) not in live and blk in self.blocks.get(ino, {}):
                    block_updates.setdefault(str(ino), {})[str(blk)] = None
        if live:
            self.media.fence(self.regions[tier])
        self.stats["bytes_written"] += BLOCK * len(live)
        rec = {
            "inodes": {str(i): (n.to_json() if n is not None else None) for i, n in sorted(ov.inodes.items())},
            "blocks": block_updates,
            "cursor": [src.log_id, batch.last_seq, end_off],
            "epoch": self.epoch,
            "bits": sorted(ov.touched),
        }
        self.commit(rec)
        self.stats["digested_entries"] += len(batch.entries)
        self.stats["digested_batches"] += 1
        if self.role == "reserve":
            self._shadow_touch(live)
        self.migrate_lru()

    # -- LRU migration -------------------------------------------------------------
    def _make_room(self, nblocks: int) -> None:
        if self.alloc["nvm"].available >= nblocks + 1:
            return
        self.migrate_lru(force_free=nblocks + 1)

    def migrate_lru(self, force_free: int = 0) -> dict:
        """Move NVM LRU-tail blocks to SSD once NVM passes its high watermark."""
        sz = self.sim.cfg.sizes
        a = self.alloc["nvm"]
        cap = a.nblocks
        high, low = int(cap * sz.hot_high_watermark), int(cap * sz.hot_low_watermark)
        report = {"moved": 0, "l3_dropped": 0}
        used = a.used
        if used <= high and a.available >= force_free:
            return report
        target = min(low, cap - force_free)
        moves: dict[str, dict[str, Any]] = {}
        drops = []
        victims = []
        # third-level copies go first on a reserve: they are the least valuable
        if self.l3:
            for key in list(self.l3):
                if used <= target:
                    break
                drops.append(list(key))
                used -= 1
        for key in list(self.lru):
            if used <= target:
                break
            victims.append(key)
            used -= 1
        for ino, blk in victims:
            _, pblk = self.blocks[ino][blk]
            data = self.media.read(self.nvm_rid, pblk * BLOCK, BLOCK, charge=False)
            npb = self.alloc["ssd"].alloc()
            self.media.write_persistent(self.ssd_rid, npb * BLOCK, data)
            moves.setdefault(str(ino), {})[str(blk)] = ["ssd", npb]
        if victims:
            self.media.fence(self.ssd_rid)
        if moves or drops:
            self.commit({"blocks": moves, "l3drop": drops})
        report["moved"] = len(victims)
        report["l3_dropped"] = len(drops)
        self.stats["migrated"] += len(victims)
        return report

    def _shadow_touch(self, live: dict) -> None:
        """Track what cache replicas keep hot; copy their evictions into NVM (third level)."""
        sz = self.sim.cfg.sizes
        hot_blocks = sz.hot_capacity // BLOCK
        for key in sorted(live):
            self.shadow[key] = None
            self.shadow.move_to_end(key)
        high = int(hot_blocks * sz.hot_high_watermark)
        low = int(hot_blocks * sz.hot_low_watermark)
        if len(self.shadow) <= high:
            return
        l3set = []
        while len(self.shadow) > low:
            (ino, blk), _ = self.shadow.popitem(last=False)
            loc = self.block_loc(ino, blk)
            if loc is None or loc[0] != "ssd" or (ino, blk) in self.l3:
                continue
            if self.alloc["nvm"].available <= 1:
                self.migrate_lru(force_free=2)
            if self.alloc["nvm"].available <= 1:
                break
            data = self.media.read(self.ssd_rid, loc[1] * BLOCK, BLOCK, charge=False)
            pb = self.alloc["nvm"].alloc()
            self.media.write_persistent(self.nvm_rid, pb * BLOCK, data)
            l3set.append([ino, blk, pb])
        if l3set:
            self.media.fence(self.nvm_rid)
            self.commit({"l3set": l3set})

    # -- roles ---------------------------------------------------------------------
    def promote(self) -> None:
        """Reserve becomes a cache replica: new digests go to NVM, SSD reads warm NVM."""
        moves = {}
        for (ino, blk), pb in sorted(self.l3.items()):
            moves.setdefault(str(ino), {})[str(blk)] = ["nvm", pb]
        # third-level copies become primary NVM blocks; the SSD copies are released
        self.commit({"role": "cache", "warming": True, "blocks": moves})

    def demote(self) -> None:
        self.commit({"role": "reserve", "warming": False})

    # -- recovery ------------------------------------------------------------------
    @classmethod
    def recover(cls, sim: "Cluster", node: str, role: str) -> "KernFS":
        """Rebuild DRAM state from the durable journal after a node restart."""
        k = cls(sim, node, role, fresh=False)
        k.journal, recs = RecordLog.reopen(k.media, k.journal_rid)
        for rec in recs:
            k._install(rec, replay=True)
        used = {"nvm": [], "ssd": []}
        for ino, bmap in k.blocks.items():
            for blk, (tier, pblk) in bmap.items():
                used[tier].append(pblk)
        used["nvm"].extend(k.l3.values())
        k.alloc = {t: Allocator.rebuild(k.media.region(r).capacity // BLOCK, used[t]) for t, r in k.regions.items()}
        k.lru = OrderedDict(sorted(((ino, blk), None) for ino, bm in k.blocks.items()
                                   for blk, (t, _) in bm.items() if t == "nvm"))
        k.lm.recover()
        return k

    def reset_mirrors(self) -> None:
        for log_id, src in list(self.sources.items()):
            if not src.local:
                self.media.reset_region(src.rid)
                self.commit({"detach": log_id})

    def evict_dead_log(self, rid: str, log_id: str) -> int:
        """Digest a dead local process log in full (process-crash path)."""
        if log_id not in self.sources:
            return 0
        return self.digest_log(log_id)["batches"]

    def refresh_inodes(self, inos: Iterable[int], peer: str) -> int:
        """Whole-inode invalidation at rejoin: refetch metadata, drop local blocks."""
        inodes: dict[str, Any] = {}
        drop: dict[str, dict[str, None]] = {}
        count = 0
        for ino in sorted(set(inos)):
            meta = self.rpc(peer, "FETCH_INODE", {"ino": ino})
            inodes[str(ino)] = meta
            bm = self.blocks.get(ino, {})
            if bm:
                drop[str(ino)] = {str(b): None for b in bm}
            count += 1
        l3drop = [[i, b] for (i, b) in self.l3 if str(i) in inodes]
        alive = [int(i) for i, m in inodes.items() if m is not None]
        for i in alive:
            self.stale_peer[i] = peer
        self.commit({"inodes": inodes, "blocks": drop, "l3drop": l3drop, "stale_add": alive})
        self.stats["invalidated"] += count
        return count

    # -- logical state ---------------------------------------------------------------
    def tree(self, root: str = "/", exclude: Iterable[str] = (), fetch: bool = True) -> dict[str, tuple]:
        """Path -> (kind, size, sha256) for the namespace at or under ``root``."""
        excl = {e.rstrip("/") for e in exclude if e != root}
        out: dict[str, tuple] = {}
        start = self.lookup_path(root)
        if start is None:
            return out

        def walk(ino: int, path: str) -> None:
            if path in excl:
                return
            n = self.inodes.get(ino)
            if n is None:
                return
            if n.kind == "dir":
                out[path] = ("dir", 0, "")
                for name, child in sorted(n.entries.items()):
                    walk(child, ("" if path == "/" else path) + "/" + name)
            else:
                out[path] = ("file", n.size, hashlib.sha256(self.file_bytes(ino, fetch)).hexdigest())

        walk(start, root if root == "/" else root.rstrip("/"))
        return out

    def state_hash(self, root: str = "/", exclude: Iterable[str] = ()) -> str:
        return tree_hash(self.tree(root, exclude))

    def lookup_path(self, path: str) -> int | None:
        ino = ROOT_INO
        for comp in [p for p in path.split("/") if p]:
            n = self.inodes.get(ino)
            if n is None or n.kind != "dir" or comp not in n.entries:
                return None
            ino = n.entries[comp]
        return ino

    def file_bytes(self, ino: int, fetch: bool = True) -> bytes:
        n = self.inodes[ino]
        out = bytearray()
        nblk = -(-n.size // BLOCK)
        for blk in range(nblk):
            loc = self.block_loc(ino, blk)
            if loc is None and ino in self.stale and fetch:
                out += self._fill_from_peer(ino, blk)
            elif loc is None:
                out += ZERO_BLOCK
            else:
                tier, pb = loc
                if (ino, blk) in self.l3:
                    out += self.media.read(self.nvm_rid, self.l3[(ino, blk)] * BLOCK, BLOCK, charge=False)
                else:
                    out += self.media.read(self.regions[tier], pb * BLOCK, BLOCK, charge=False)
        return bytes(out[: n.size])

    def placement(self) -> dict[str, int]:
        """Block counts per physical tier (testing aid)."""
        out = {"nvm": 0, "ssd": 0, "l3": len(self.l3)}
        for bm in self.blocks.values():
            for tier, _ in bm.values():
                out[tier] += 1
        return out

    # -- handlers ----------------------------------------------------------------------
    def h_epoch(self, src: Endpoint, p: dict) -> None:
        self.epoch = max(self.epoch, p["epoch"])

    def h_mirror_attach(self, src: Endpoint, p: dict) -> str:
        log_id = p["log"]
        rid = f"{self.node}:mirror:{log_id}"
        if rid not in self.media.regions:
            self.media.create_region(self.node, Tier.NVM, p["capacity"], rid)
        if log_id not in self.sources or self.sources[log_id].local:
            self.attach(log_id, rid, False, p["uid"], p["gid"])
        self.sim.net.register(self.ep, rid)
        return rid

    def h_mirror_reset(self, src: Endpoint, p: dict) -> None:
        """Start a mirror afresh at a given digest cursor (rejoin resync)."""
        log_id = p["log"]
        src_ = self.sources.get(log_id)
        if src_ is None:
            return
        self.media.reset_region(src_.rid)
        self.commit({"cursor": [log_id, p["seq"], p["off"]]})

    def h_chain_step(self, src: Endpoint, p: dict) -> dict:
        """Our mirror already holds the slices; forward them down the chain."""
        rest: list[str] = p["rest"]
        acks = {self.node: p["last"]}
        self.stats["acked_bytes"] += sum(length for _, length in p["slices"])
        if not rest:
            return acks
        nxt = rest[0]
        rid_here = self.sources[p["log"]].rid
        rid_next = f"{nxt}:mirror:{p['log']}"
        for off, length in p["slices"]:
            data = self.media.read(rid_here, off, length, charge=False)
            c = self.sim.net.rdma_write(self.ep, self.kfs_ep(nxt), rid_next, off, data, tag="SEGMENT_WRITE")
            self.sim.net.wait(c)
        reply = self.sim.net.rpc(self.ep, self.kfs_ep(nxt), "CHAIN_STEP", dict(p, rest=rest[1:]))
        acks.update(reply)
        return acks

    def h_evict(self, src: Endpoint, p: dict) -> dict:
        rep = self.digest_log(p["log"], p.get("through"))
        if p.get("hash"):
            rep["hash"] = self.state_hash(p.get("root", "/"))
        return rep

    def h_read(self, src: Endpoint, p: dict) -> bytes | None:
        ino, blk = p["ino"], p["blk"]
        if p.get("l3_only"):
            return self.read_l3(ino, blk)
        if ino not in self.inodes:
            return None
        data, where = self.read_block(ino, blk)
        return data

    def h_fetch_inode(self, src: Endpoint, p: dict) -> list | None:
        n = self.inodes.get(p["ino"])
        return n.to_json() if n is not None else None

    def h_fetch_block(self, src: Endpoint, p: dict) -> bytes | None:
        if p["ino"] not in self.inodes:
            return None
        data, _ = self.read_block(p["ino"], p["blk"])
        return data

    def h_bitmaps(self, src: Endpoint, p: dict) -> dict[int, list[int]]:
        return {e: sorted(s) for e, s in self.bitmaps.items() if e >= p["since"]}

    def gc_bitmaps(self, keep_from: int) -> None:
        drop = [e for e in self.bitmaps if e < keep_from]
        if drop:
            self.commit({"bitmaps_drop": drop})

    def h_resize_prepare(self, src: Endpoint, p: dict) -> bool:
        free = self.sim.cfg.sizes.nvm_budget - sum(
            r.capacity for r in self.media.node_regions(self.node) if r.tier is Tier.NVM and ":mirror:" in r.id)
        if p.get("deny") or p["capacity"] - p.get("current", 0) > free:
            return False
        self._resize_reserved[p["log"]] = p["capacity"]
        return True

    def h_resize_commit(self, src: Endpoint, p: dict) -> None:
        cap = self._resize_reserved.pop(p["log"])
        s = self.sources.get(p["log"])
        if s is None or s.local:
            return
        self.media.delete_region(s.rid)
        self.media.create_region(self.node, Tier.NVM, cap, s.rid)
        self.sim.net.register(self.ep, s.rid)
        self.commit({"cursor": [p["log"], s.seq, DATA_START]})

    def h_resize_abort(self, src: Endpoint, p: dict) -> None:
        self._resize_reserved.pop(p["log"], None)
