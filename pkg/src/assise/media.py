"""Simulated storage tiers with an explicit persistence model.

Every NVM/SSD region keeps two views: durable pages (what a crash preserves)
and a FIFO of issued-but-unpersisted writes. Reads see the durable pages with
the pending writes overlaid, so visibility is immediate and durability is not.
A crash keeps a harness-chosen prefix of each region's pending stream and drops
the rest, so recovered contents are always a replay of a prefix of the issued
writes. DRAM regions are simply zeroed.

Writes are atomic units: a crash never tears a single write.

Region files
------------
``save_region`` writes ``MAGIC`` (8 bytes), a version byte, the tier byte, the
capacity (u64 LE) and then the full durable contents. A sidecar
``<path>.journal`` holds one ``offset length`` line per persisted write in
issue order.
"""
from __future__ import annotations

import enum
import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

from .clock import SimClock
from .config import LatencyModel
from .errors import CapacityExceeded, MediaError, NodeCrashed, OutOfRange, UnknownRegion, WrongTier

PAGE = 4096
SSD_BLOCK = 4096
MAGIC = b"ASSISEMR"
FILE_VERSION = 1


class Tier(enum.Enum):
    DRAM = "DRAM"
    NVM = "NVM"
    SSD = "SSD"


_TIER_CODE = {Tier.DRAM: 0, Tier.NVM: 1, Tier.SSD: 2}
_CODE_TIER = {v: k for k, v in _TIER_CODE.items()}
_TIER_CLASS = {Tier.DRAM: "dram", Tier.NVM: "nvm_local", Tier.SSD: "ssd"}


@dataclass
class _Write:
    offset: int
    data: bytes
    persist_at: int
    gidx: int


@dataclass(frozen=True)
class WriteTicket:
    region: str
    gidx: int
    persist_at: int


@dataclass
class Region:
    id: str
    node: str
    tier: Tier
    capacity: int
    pages: dict[int, bytearray] = field(default_factory=dict)
    pending: list[_Write] = field(default_factory=list)
    journal: list[tuple[int, int]] = field(default_factory=list)
    last_persist: int = 0
    issued: int = 0

    @property
    def durable(self) -> bool:
        return self.tier is not Tier.DRAM

    def _apply(self, offset: int, data: bytes) -> None:
        pos = 0
        while pos < len(data):
            pno, poff = divmod(offset + pos, PAGE)
            n = min(PAGE - poff, len(data) - pos)
            page = self.pages.get(pno)
            if page is None:
                if not any(data[pos : pos + n]):
                    pos += n
                    continue
                page = self.pages[pno] = bytearray(PAGE)
            page[poff : poff + n] = data[pos : pos + n]
            pos += n

    def _read_pages(self, offset: int, length: int) -> bytearray:
        out = bytearray(length)
        pos = 0
        while pos < length:
            pno, poff = divmod(offset + pos, PAGE)
            n = min(PAGE - poff, length - pos)
            page = self.pages.get(pno)
            if page is not None:
                out[pos : pos + n] = page[poff : poff + n]
            pos += n
        return out

    def contents(self, offset: int, length: int) -> bytes:
        out = self._read_pages(offset, length)
        end = offset + length
        for w in self.pending:
            lo, hi = max(offset, w.offset), min(end, w.offset + len(w.data))
            if lo < hi:
                out[lo - offset : hi - offset] = w.data[lo - w.offset : hi - w.offset]
        return bytes(out)

    def persist_prefix(self, k: int) -> None:
        for w in self.pending[:k]:
            self._apply(w.offset, w.data)
            self.journal.append((w.offset, len(w.data)))
        del self.pending[:k]


CutSpec = Union[None, str, int, dict, Callable[[Region, int], int]]


class Media:
    """All simulated storage in a cluster, addressed by region id."""

    def __init__(self, clock: SimClock, latency: LatencyModel | None = None):
        self.clock = clock
        self.latency = latency or LatencyModel()
        self.regions: dict[str, Region] = {}
        self.nodes: set[str] = set()
        self.down: set[str] = set()
        self._ids = itertools.count()
        self._gidx = itertools.count()
        self._armed: dict[str, list] = {}
        self.crash_handler: Callable[[str, CutSpec], None] = self.crash
        self.bytes_written: dict[str, int] = {}
        self.write_count: dict[str, int] = {}

    # -- regions -------------------------------------------------------------
    def add_node(self, node: str) -> None:
        self.nodes.add(node)

    def create_region(self, node: str, tier: Tier, capacity: int, name: str | None = None) -> Region:
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.add_node(node)
        rid = name or f"{node}:{tier.value.lower()}{next(self._ids)}"
        if rid in self.regions:
            raise ValueError(f"region {rid} exists")
        r = Region(rid, node, tier, capacity)
        self.regions[rid] = r
        return r

    def delete_region(self, rid: str) -> None:
        self.regions.pop(rid, None)

    def region(self, rid: str) -> Region:
        try:
            return self.regions[rid]
        except KeyError:
            raise UnknownRegion(rid) from None

    def node_regions(self, node: str) -> list[Region]:
        return [r for r in self.regions.values() if r.node == node]

    def reset_region(self, rid: str) -> None:
        """Discard contents (models a persistent trim of the whole region)."""
        r = self.region(rid)
        r.pages.clear()
        r.pending.clear()
        r.journal.clear()

    # -- IO ------------------------------------------------------------------
    def _check(self, r: Region, offset: int, length: int, err=OutOfRange) -> None:
        if r.node in self.down:
            # whatever was running on that node died with it
            raise NodeCrashed(r.node)
        if offset < 0 or offset + length > r.capacity or (err is CapacityExceeded and offset >= r.capacity):
            raise err(f"{r.id}: [{offset}, {offset + length}) outside capacity {r.capacity}")

    def write_persistent(self, rid: str, offset: int, data: bytes, delay: int = 0) -> WriteTicket:
        """Queue a durable write; it persists in issue order per region.

        ``delay`` is extra time before the write reaches the medium (e.g. a
        network hop). The call itself does not advance the clock.
        """
        r = self.region(rid)
        if not r.durable:
            raise WrongTier(f"{rid} is {r.tier.value}; use store()")
        data = bytes(data)
        self._check(r, offset, len(data), CapacityExceeded)
        if r.tier is Tier.SSD and (offset % SSD_BLOCK or len(data) % SSD_BLOCK):
            lo = offset - offset % SSD_BLOCK
            hi = -(-(offset + len(data)) // SSD_BLOCK) * SSD_BLOCK
            hi = min(hi, r.capacity)
            buf = bytearray(r.contents(lo, hi - lo))
            buf[offset - lo : offset - lo + len(data)] = data
            offset, data = lo, bytes(buf)
        self._settle(r)
        cost = self.latency.write_ns(_TIER_CLASS[r.tier], len(data))
        persist_at = max(r.last_persist, self.clock.now + delay) + cost
        r.last_persist = persist_at
        gidx = next(self._gidx)
        r.pending.append(_Write(offset, data, persist_at, gidx))
        r.issued += 1
        self.bytes_written[r.node] = self.bytes_written.get(r.node, 0) + len(data)
        self.write_count[r.node] = self.write_count.get(r.node, 0) + 1
        self._tick_armed(r.node, rid)
        return WriteTicket(rid, gidx, persist_at)

    def store(self, rid: str, offset: int, data: bytes) -> None:
        """Volatile write (DRAM regions)."""
        r = self.region(rid)
        if r.durable:
            raise WrongTier(f"{rid} is durable; use write_persistent()")
        self._check(r, offset, len(data), CapacityExceeded)
        r._apply(offset, bytes(data))

    def read(self, rid: str, offset: int, length: int, charge: bool = True) -> bytes:
        r = self.region(rid)
        self._check(r, offset, length)
        if charge:
            self.clock.advance(self.latency.read_ns(_TIER_CLASS[r.tier], length))
        self._settle(r)
        return r.contents(offset, length)

    def _settle(self, r: Region) -> None:
        now = self.clock.now
        k = 0
        for w in r.pending:
            if w.persist_at > now:
                break
            k += 1
        if k:
            r.persist_prefix(k)

    def is_persisted(self, ticket: WriteTicket) -> bool:
        r = self.regions.get(ticket.region)
        if r is None:
            return False
        self._settle(r)
        return all(w.gidx != ticket.gidx for w in r.pending) and ticket.persist_at <= self.clock.now

    def fence(self, *rids: str) -> int:
        """Block until every write issued to ``rids`` has persisted."""
        t = self.clock.now
        for rid in rids:
            r = self.region(rid)
            if r.pending:
                t = max(t, r.pending[-1].persist_at)
        self.clock.advance_to(t)
        for rid in rids:
            self._settle(self.region(rid))
        return t

    def wait(self, ticket: WriteTicket) -> None:
        self.clock.advance_to(ticket.persist_at)
        r = self.regions.get(ticket.region)
        if r is not None:
            self._settle(r)

    # -- crashes -------------------------------------------------------------
    def pending_writes(self, node: str) -> list[tuple[str, int]]:
        """Per-region count of unpersisted writes on ``node``."""
        out = []
        for r in self.node_regions(node):
            if r.durable:
                self._settle(r)
                if r.pending:
                    out.append((r.id, len(r.pending)))
        return out

    def pending_total(self, node: str) -> int:
        return sum(n for _, n in self.pending_writes(node))

    def arm_crash(self, node: str, after_writes: int, cut: CutSpec = None, region: str | None = None) -> None:
        """Crash ``node`` right after the ``after_writes``-th durable write to it.

        With ``region`` set, only writes to that region count.
        """
        if after_writes < 1:
            raise ValueError("after_writes must be >= 1")
        self._armed[node] = [after_writes, cut, region]

    def disarm(self, node: str | None = None) -> None:
        if node is None:
            self._armed.clear()
        else:
            self._armed.pop(node, None)

    def _tick_armed(self, node: str, rid: str) -> None:
        arm = self._armed.get(node)
        if arm is None or (arm[2] is not None and arm[2] != rid):
            return
        arm[0] -= 1
        if arm[0] <= 0:
            del self._armed[node]
            self.crash_handler(node, arm[1])
            raise NodeCrashed(node)

    def crash(self, node: str, cut: CutSpec = None) -> None:
        """Erase DRAM and cut every durable write stream of ``node``."""
        if node not in self.nodes:
            raise MediaError(f"unknown node {node}")
        regions = self.node_regions(node)
        for r in regions:
            if r.durable:
                self._settle(r)
        keep = self._resolve_cut(regions, cut)
        for r in regions:
            if r.durable:
                r.persist_prefix(keep.get(r.id, 0))
                r.pending.clear()
                r.last_persist = self.clock.now
            else:
                r.pages.clear()
        self.down.add(node)
        self._armed.pop(node, None)

    def _resolve_cut(self, regions: list[Region], cut: CutSpec) -> dict[str, int]:
        durable = [r for r in regions if r.durable]
        if cut is None:
            return {}
        if cut == "all":
            return {r.id: len(r.pending) for r in durable}
        if isinstance(cut, int):
            writes = sorted((w.gidx, r.id) for r in durable for w in r.pending)
            keep: dict[str, int] = {}
            for _, rid in writes[:cut]:
                keep[rid] = keep.get(rid, 0) + 1
            return keep
        if isinstance(cut, dict):
            return {rid: max(0, min(k, len(self.regions[rid].pending))) for rid, k in cut.items()}
        if callable(cut):
            return {r.id: max(0, min(int(cut(r, len(r.pending))), len(r.pending))) for r in durable}
        raise ValueError(f"bad cut spec {cut!r}")

    def recover(self, node: str) -> None:
        if node not in self.nodes:
            raise MediaError(f"unknown node {node}")
        self.down.discard(node)

    def erase(self, rid: str) -> None:
        """Drop a volatile region's contents (its owning process died)."""
        r = self.region(rid)
        if r.durable:
            raise WrongTier(f"{rid} is durable")
        r.pages.clear()

    # -- serialization -------------------------------------------------------
    def save_region(self, rid: str, path: str | Path) -> None:
        r = self.region(rid)
        self._settle(r)
        path = Path(path)
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<BBQ", FILE_VERSION, _TIER_CODE[r.tier], r.capacity))
            f.write(r._read_pages(0, r.capacity))
        with open(str(path) + ".journal", "w") as f:
            for off, n in r.journal:
                f.write(f"{off} {n}\n")

    def load_region(self, path: str | Path, node: str, rid: str | None = None) -> Region:
        path = Path(path)
        with open(path, "rb") as f:
            if f.read(8) != MAGIC:
                raise MediaError(f"{path}: bad magic")
            version, code, capacity = struct.unpack("<BBQ", f.read(10))
            if version != FILE_VERSION:
                raise MediaError(f"{path}: unsupported version {version}")
            body = f.read(capacity)
        r = self.create_region(node, _CODE_TIER[code], capacity, rid)
        r._apply(0, body)
        jpath = Path(str(path) + ".journal")
        if jpath.exists():
            r.journal = [tuple(map(int, line.split())) for line in jpath.read_text().splitlines() if line]
        return r


def replay_journal(writes: list[tuple[int, bytes]], capacity: int) -> bytes:
    """Apply ``(offset, data)`` writes in order to a zeroed buffer."""
    buf = bytearray(capacity)
    for off, data in writes:
        buf[off : off + len(data)] = data
    return bytes(buf)
