"""Per-process persistent update log.

Layout of a log region (all integers little-endian)::

    [0, 64)          superblock: magic "LOGS", version, capacity, head offset,
                     head seq, replicated seq, mirror cursor, mirror head, CRC32C
    [64, capacity)   ring of entries; each entry is a 64-byte header followed
                     by its payload. An entry never straddles the end of the
                     ring: a WRAP header (or, if fewer than 64 bytes remain,
                     nothing) sends the reader back to offset 64.

Entry header::

    u32 magic  u8 version  u8 op  u16 flags  u64 seq  u64 txn  u64 inode
    u64 offset  u32 payload_len  u64 time  u32 crc32c  8 bytes padding

The CRC covers the header (with the CRC field zeroed) and the payload.
Metadata operations carry a compact JSON payload; WRITE carries raw bytes.
A COMMIT entry closes a transaction batch and records ``first``, ``last`` and
``count`` of the entries it covers, which is how a mirrored log tells a
complete batch from a torn one.
"""
from __future__ import annotations

import enum
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Iterable, Protocol

from .crc import crc32c
from .errors import CapacityExceeded, ChecksumError, LogError, LogFull, NodeFailed, ResizeAborted
from .media import Media

ENTRY_MAGIC = 0x31474F4C
SB_MAGIC = 0x53474F4C
LOG_VERSION = 1
HEADER = struct.Struct("<IBBHQQQQIQI8x")
SUPERBLOCK = struct.Struct("<IB3xQQQQQQI4x")
HEADER_SIZE = HEADER.size
DATA_START = SUPERBLOCK.size
assert HEADER_SIZE == 64 and DATA_START == 64


class OpKind(enum.IntEnum):
    WRITE = 1
    CREATE = 2
    UNLINK = 3
    RENAME = 4
    MKDIR = 5
    TRUNCATE = 6
    SETATTR = 7
    COMMIT = 8
    WRAP = 9


OP_END = 2  # entry flag: last entry of one POSIX operation
COALESCED = 1  # COMMIT flag: the batch was coalesced before replication

METADATA_OPS = {OpKind.CREATE, OpKind.UNLINK, OpKind.RENAME, OpKind.MKDIR, OpKind.SETATTR}


@dataclass
class LogEntry:
    seq: int
    op: OpKind
    inode: int = 0
    offset: int = 0
    payload: bytes = b""
    txn: int = 0
    time: int = 0
    flags: int = 0
    pos: int = -1

    @property
    def size(self) -> int:
        return HEADER_SIZE + len(self.payload)

    @property
    def meta(self) -> dict:
        return json.loads(self.payload) if self.payload else {}

    def encode(self) -> bytes:
        hdr = HEADER.pack(ENTRY_MAGIC, LOG_VERSION, int(self.op), self.flags, self.seq, self.txn,
                          self.inode, self.offset, len(self.payload), self.time, 0)
        crc = crc32c(self.payload, crc32c(hdr))
        return HEADER.pack(ENTRY_MAGIC, LOG_VERSION, int(self.op), self.flags, self.seq, self.txn,
                           self.inode, self.offset, len(self.payload), self.time, crc) + self.payload

    @classmethod
    def decode_header(cls, hdr: bytes) -> tuple | None:
        fields = HEADER.unpack(hdr)
        if fields[0] != ENTRY_MAGIC or fields[1] != LOG_VERSION:
            return None
        try:
            OpKind(fields[2])
        except ValueError:
            return None
        return fields

    @classmethod
    def decode(cls, hdr: bytes, payload: bytes, pos: int = -1) -> "LogEntry":
        fields = cls.decode_header(hdr)
        if fields is None:
            raise ChecksumError("bad entry header")
        _, _, op, flags, seq, txn, inode, offset, plen, time, crc = fields
        zeroed = hdr[:52] + b"\0\0\0\0" + hdr[56:]
        if crc32c(payload, crc32c(zeroed)) != crc:
            raise ChecksumError(f"entry seq {seq} at {pos}: checksum mismatch")
        return cls(seq, OpKind(op), inode, offset, bytes(payload), txn, time, flags, pos)


def meta_payload(**kw) -> bytes:
    return json.dumps(kw, sort_keys=True, separators=(",", ":")).encode()


def commit_entry(seq: int, first: int, last: int, count: int, txn: int, time: int = 0) -> LogEntry:
    return LogEntry(seq, OpKind.COMMIT, payload=meta_payload(first=first, last=last, count=count), txn=txn, time=time)


def place(off: int, size: int, capacity: int) -> tuple[int, bool]:
    """Where an entry of ``size`` bytes goes if the ring cursor is at ``off``."""
    if off + size <= capacity:
        return off, False
    return DATA_START, True


def layout(blobs: list[tuple[int, bytes]], cursor: int, capacity: int) -> tuple[list[tuple[int, bytes]], int]:
    """Lay encoded entries ``(seq, bytes)`` into a ring starting at ``cursor``.

    Returns contiguous ``(offset, payload)`` slices (split only at wrap-around)
    and the new cursor.
    """
    slices: list[tuple[int, bytearray]] = []
    cur_start, cur = cursor, bytearray()
    off = cursor
    for seq, blob in blobs:
        start, wrapped = place(off, len(blob), capacity)
        if wrapped:
            if capacity - off >= HEADER_SIZE:
                cur += LogEntry(seq, OpKind.WRAP).encode()
            if cur:
                slices.append((cur_start, cur))
            cur_start, cur = DATA_START, bytearray()
            off = DATA_START
        cur += blob
        off += len(blob)
    if cur:
        slices.append((cur_start, cur))
    return [(o, bytes(b)) for o, b in slices], off


def read_entry(media: Media, rid: str, pos: int, capacity: int, charge: bool = True) -> LogEntry | None:
    """Decode the entry at ``pos``; ``None`` if the bytes there are not a valid entry."""
    if pos + HEADER_SIZE > capacity:
        return None
    hdr = media.read(rid, pos, HEADER_SIZE, charge=charge)
    fields = LogEntry.decode_header(hdr)
    if fields is None:
        return None
    plen = fields[8]
    if pos + HEADER_SIZE + plen > capacity:
        return None
    payload = media.read(rid, pos + HEADER_SIZE, plen, charge=charge) if plen else b""
    try:
        return LogEntry.decode(hdr, payload, pos)
    except ChecksumError:
        return None


def scan(media: Media, rid: str, start: int, after_seq: int, *, contiguous: bool = True,
         charge: bool = False) -> list[LogEntry]:
    """Read valid entries from ``start`` until the stream ends.

    With ``contiguous`` the sequence numbers must be exactly consecutive
    (a LibFS-owned log); otherwise they only need to increase (a mirrored
    log that may hold coalesced batches).
    """
    capacity = media.region(rid).capacity
    out: list[LogEntry] = []
    pos, last = start, after_seq
    wraps = 0
    while True:
        if pos + HEADER_SIZE > capacity:
            pos, wraps = DATA_START, wraps + 1
            if wraps > 1:
                break
            continue
        e = read_entry(media, rid, pos, capacity, charge)
        if e is None:
            break
        if e.op is OpKind.WRAP:
            if e.seq != last + 1 and (contiguous or e.seq <= last):
                break
            pos, wraps = DATA_START, wraps + 1
            if wraps > 1:
                break
            continue
        if (contiguous and e.seq != last + 1) or e.seq <= last:
            break
        out.append(e)
        last = e.seq
        pos += e.size
    return out


def complete_batches(entries: list[LogEntry]) -> list[LogEntry]:
    """Drop everything after the last COMMIT whose batch is fully present."""
    good = 0
    pending: list[LogEntry] = []
    for i, e in enumerate(entries):
        if e.op is OpKind.COMMIT:
            m = e.meta
            body = [p for p in pending]
            ok = len(body) == m["count"] and (not body or (body[0].seq >= m["first"] and body[-1].seq <= m["last"]))
            if not ok:
                break
            good = i + 1
            pending = []
        else:
            pending.append(e)
    return entries[:good]


@dataclass
class TxnBatch:
    txn: int
    first_seq: int
    last_seq: int
    entries: list[LogEntry]
    coalesced: bool = False


def batches(entries: Iterable[LogEntry]) -> list[TxnBatch]:
    """Group entries into batches closed by COMMIT markers (trailing open batch dropped)."""
    out: list[TxnBatch] = []
    cur: list[LogEntry] = []
    for e in entries:
        if e.op is OpKind.COMMIT:
            m = e.meta
            out.append(TxnBatch(e.txn, m["first"], e.seq, cur, bool(e.flags & 1)))
            cur = []
        else:
            cur.append(e)
    return out


class UpdateLog:
    """A LibFS-owned update log living in one NVM region."""

    def __init__(self, media: Media, region_id: str, owner: str = "", *, threshold: float = 0.7,
                 format: bool = True):
        self.media = media
        self.rid = region_id
        self.owner = owner
        self.capacity = media.region(region_id).capacity
        if self.capacity < DATA_START + 2 * HEADER_SIZE:
            raise CapacityExceeded("log region too small")
        self.threshold = threshold
        self.head_off = DATA_START
        self.head_seq = 0
        self.tail_off = DATA_START
        self.tail_seq = 0
        self.replicated_seq = 0
        self.mirror_off = DATA_START
        self.mirror_head = DATA_START
        self.txn = 0
        self.last_commit_seq = 0
        self._live: OrderedDict[int, tuple[int, int, OpKind, int]] = OrderedDict()
        self.index: dict[int, list[tuple[int, int, int, OpKind]]] = {}
        self.digesting = False
        self.appended_bytes = 0
        if format:
            self.write_superblock()

    # -- superblock ----------------------------------------------------------
    def write_superblock(self, fence: bool = True) -> None:
        fields = (self.capacity, self.head_off, self.head_seq, self.replicated_seq, self.mirror_off,
                  self.mirror_head)
        crc = crc32c(SUPERBLOCK.pack(SB_MAGIC, LOG_VERSION, *fields, 0))
        body = SUPERBLOCK.pack(SB_MAGIC, LOG_VERSION, *fields, crc)
        self.media.write_persistent(self.rid, 0, body)
        if fence:
            self.media.fence(self.rid)

    @staticmethod
    def read_superblock(media: Media, rid: str) -> dict | None:
        raw = media.read(rid, 0, DATA_START, charge=False)
        magic, ver, *fields, crc = SUPERBLOCK.unpack(raw)
        if magic != SB_MAGIC or ver != LOG_VERSION:
            return None
        if crc32c(SUPERBLOCK.pack(magic, ver, *fields, 0)) != crc:
            return None
        keys = ("capacity", "head_off", "head_seq", "replicated_seq", "mirror_off", "mirror_head")
        return dict(zip(keys, fields))

    @classmethod
    def open(cls, media: Media, rid: str, owner: str = "", threshold: float = 0.7) -> "UpdateLog":
        """Rebuild a log from its region after a crash (contiguous-seq scan)."""
        log = cls(media, rid, owner, threshold=threshold, format=False)
        sb = cls.read_superblock(media, rid)
        if sb is None:
            log.write_superblock()
            return log
        log.head_off = log.tail_off = sb["head_off"]
        log.head_seq = log.tail_seq = sb["head_seq"]
        log.last_commit_seq = log.head_seq  # reclaimed entries were all committed
        log.replicated_seq = max(sb["replicated_seq"], sb["head_seq"])
        log.mirror_off = sb["mirror_off"]
        log.mirror_head = sb["mirror_head"]
        for e in scan(media, rid, log.head_off, log.head_seq, contiguous=True):
            log._track(e)
            start, _ = place(log.tail_off, e.size, log.capacity)
            log.tail_off = e.pos + e.size
            log.tail_seq = e.seq
            if e.op is OpKind.COMMIT:
                log.last_commit_seq = e.seq
            log.txn = max(log.txn, e.txn)
        log.replicated_seq = min(log.replicated_seq, log.tail_seq)
        return log

    # -- space ---------------------------------------------------------------
    @property
    def data_capacity(self) -> int:
        return self.capacity - DATA_START

    @property
    def digested_seq(self) -> int:
        return self.head_seq

    def used(self) -> int:
        if not self._live:
            return 0
        if self.tail_off > self.head_off:
            return self.tail_off - self.head_off
        return (self.capacity - self.head_off) + (self.tail_off - DATA_START)

    def free(self) -> int:
        return self.data_capacity - self.used()

    def has_room(self, size: int) -> bool:
        if not self._live:
            return size <= self.data_capacity
        start, wrapped = place(self.tail_off, size, self.capacity)
        if self.tail_off > self.head_off or (self.tail_off == self.head_off and not self._live):
            if not wrapped:
                return True
            return DATA_START + size <= self.head_off
        return self.tail_off + size <= self.head_off and not wrapped

    def needs_digest(self, extra: int = 0) -> bool:
        return self.used() + extra > self.threshold * self.data_capacity

    # -- appends -------------------------------------------------------------
    def _track(self, e: LogEntry) -> None:
        self._live[e.seq] = (e.pos, e.size, e.op, e.inode)
        if e.op in (OpKind.WRITE, OpKind.TRUNCATE):
            length = len(e.payload) if e.op is OpKind.WRITE else 0
            self.index.setdefault(e.inode, []).append((e.seq, e.offset, length, e.op))

    def append(self, op: OpKind, inode: int = 0, offset: int = 0, payload: bytes = b"", time: int = 0,
               txn: int | None = None, flags: int = 0) -> LogEntry:
        """Persist one entry at the tail and return it (with its seq and position)."""
        size = HEADER_SIZE + len(payload)
        if size > self.data_capacity:
            raise CapacityExceeded(f"entry of {size} bytes exceeds log capacity {self.data_capacity}")
        if not self.has_room(size):
            raise LogFull(f"log {self.rid} full ({self.used()} used)")
        if not self._live:
            self.head_off = self.tail_off
        start, wrapped = place(self.tail_off, size, self.capacity)
        seq = self.tail_seq + 1
        if wrapped and self.capacity - self.tail_off >= HEADER_SIZE:
            self.media.write_persistent(self.rid, self.tail_off, LogEntry(seq, OpKind.WRAP).encode())
        if not self._live:
            self.head_off = start
        e = LogEntry(seq, OpKind(op), inode, offset, bytes(payload), self.txn if txn is None else txn, time,
                     flags, pos=start)
        self.media.write_persistent(self.rid, start, e.encode())
        self.media.fence(self.rid)
        self.tail_off = start + size
        self.tail_seq = seq
        self._track(e)
        self.appended_bytes += size
        return e

    def append_commit(self, time: int = 0, coalesced: bool = False) -> LogEntry | None:
        """Close the open batch. Returns ``None`` if nothing is open."""
        first = self.last_commit_seq + 1
        count = self.tail_seq - self.last_commit_seq
        if count <= 0:
            return None
        e = self.append(OpKind.COMMIT, payload=meta_payload(first=first, last=self.tail_seq, count=count),
                        time=time)
        if coalesced:
            e.flags |= 1
        self.last_commit_seq = e.seq
        self.txn += 1
        return e

    def drop_after(self, seq: int) -> int:
        """Forget entries past ``seq`` (a torn operation at the tail of a dead log)."""
        dropped = [s for s in self._live if s > seq]
        for s in dropped:
            del self._live[s]
        for ino in list(self.index):
            kept = [t for t in self.index[ino] if t[0] <= seq]
            if kept:
                self.index[ino] = kept
            else:
                del self.index[ino]
        if dropped:
            self.tail_seq = seq
            self.tail_off = (self._live[seq][0] + self._live[seq][1]) if seq in self._live else self.head_off
        return len(dropped)

    def op_boundary(self) -> int:
        """Seq of the last entry that completed an operation (or closed a batch)."""
        for s in reversed(self._live):
            if self._live[s][2] is OpKind.COMMIT:
                return s
            e = self.entry(s, charge=False)
            if e.flags & OP_END:
                return s
        return self.head_seq

    # -- reads ---------------------------------------------------------------
    def entry(self, seq: int, charge: bool = True) -> LogEntry:
        pos, size, _, _ = self._live[seq]
        e = read_entry(self.media, self.rid, pos, self.capacity, charge)
        if e is None or e.seq != seq:
            raise ChecksumError(f"log {self.rid}: entry {seq} unreadable")
        return e

    def entries(self, after_seq: int, through_seq: int, charge: bool = False) -> list[LogEntry]:
        return [self.entry(s, charge) for s in self._live if after_seq < s <= through_seq]

    def live_seqs(self) -> list[int]:
        return list(self._live)

    def lookup(self, inode: int, offset: int) -> int | None:
        """Seq of the newest live WRITE covering ``(inode, offset)`` (hashtable path)."""
        for seq, off, length, op in reversed(self.index.get(inode, ())):
            if op is OpKind.TRUNCATE and offset >= off:
                return None
            if op is OpKind.WRITE and off <= offset < off + length:
                return seq
        return None

    def lookup_scan(self, inode: int, offset: int) -> int | None:
        """Same answer as :meth:`lookup`, by linear scan of the region (oracle)."""
        found = None
        for e in scan(self.media, self.rid, self.head_off, self.head_seq):
            if e.inode != inode:
                continue
            if e.op is OpKind.WRITE and e.offset <= offset < e.offset + len(e.payload):
                found = e.seq
            elif e.op is OpKind.TRUNCATE and offset >= e.offset:
                found = None
        return found

    def pending_for(self, inode: int) -> list[tuple[int, int, int, OpKind]]:
        return self.index.get(inode, [])

    def has_pending(self) -> bool:
        return bool(self._live)

    # -- watermarks ----------------------------------------------------------
    def mark_replicated(self, seq: int, mirror_off: int | None = None) -> None:
        if seq > self.tail_seq:
            raise LogError("cannot replicate beyond tail")
        if seq > self.replicated_seq or (mirror_off is not None and mirror_off != self.mirror_off):
            self.replicated_seq = max(seq, self.replicated_seq)
            if mirror_off is not None:
                self.mirror_off = mirror_off
            self.write_superblock()

    def reclaim(self, through_seq: int, mirror_head: int | None = None) -> int:
        """Free entries up to ``through_seq`` after they were digested everywhere."""
        if through_seq > self.replicated_seq:
            raise LogError("digest may not pass the replicated watermark")
        freed = 0
        while self._live:
            seq = next(iter(self._live))
            if seq > through_seq:
                break
            pos, size, op, inode = self._live.pop(seq)
            freed += size
        for ino in list(self.index):
            kept = [t for t in self.index[ino] if t[0] > through_seq]
            if kept:
                self.index[ino] = kept
            else:
                del self.index[ino]
        self.head_seq = max(self.head_seq, through_seq)
        self.head_off = self._live[next(iter(self._live))][0] if self._live else self.tail_off
        if mirror_head is not None:
            self.mirror_head = mirror_head
        self.write_superblock()
        return freed

    def check_watermarks(self) -> None:
        assert self.digested_seq <= self.replicated_seq <= self.tail_seq, (
            self.digested_seq, self.replicated_seq, self.tail_seq)


# -- coalescing ---------------------------------------------------------------

def _subtract(intervals: list[tuple[int, int]], lo: int, hi: int) -> list[tuple[int, int]]:
    """Parts of [lo, hi) not covered by ``intervals``."""
    parts = [(lo, hi)]
    for a, b in intervals:
        nxt = []
        for x, y in parts:
            if b <= x or a >= y:
                nxt.append((x, y))
                continue
            if x < a:
                nxt.append((x, a))
            if b < y:
                nxt.append((b, y))
        parts = nxt
        if not parts:
            break
    return parts


def coalesce(entries: list[LogEntry]) -> list[LogEntry]:
    """Drop or trim entries whose effect is superseded later in ``entries``.

    Rules: a WRITE byte range overwritten by later WRITEs or cut off by a
    later TRUNCATE is removed (trimmed when the surviving part is one
    contiguous range); a file created and unlinked inside the range vanishes
    together with everything done to it (including renames that displaced
    nothing); writes to a file that is unlinked
    later are dropped. Relative order of the survivors is preserved and no
    entry crosses files. COMMIT/WRAP entries are not expected here.
    """
    body = [e for e in entries if e.op not in (OpKind.COMMIT, OpKind.WRAP)]
    displacing: set[int] = set()
    victims: set[int] = set()
    created: set[int] = set()
    unlinked: set[int] = set()
    for e in body:
        if e.op is OpKind.RENAME and e.meta.get("victim"):
            displacing.add(e.inode)
            victims.add(e.meta["victim"])
        elif e.op is OpKind.CREATE:
            created.add(e.inode)
        elif e.op is OpKind.UNLINK:
            unlinked.add(e.inode)
    # files born and killed here drop out entirely, unless a rename of theirs
    # removed another file or they were themselves removed by one
    vanish = {i for i in created & unlinked if i not in displacing and i not in victims}
    dead_later: dict[int, int] = {}
    for e in body:
        if e.op is OpKind.UNLINK:
            dead_later[e.inode] = e.seq
    out_rev: list[LogEntry] = []
    covered: dict[int, list[tuple[int, int]]] = {}
    for e in reversed(body):
        if e.inode in vanish and e.op is not OpKind.MKDIR:
            continue
        if e.op in (OpKind.WRITE, OpKind.TRUNCATE, OpKind.SETATTR) and dead_later.get(e.inode, -1) > e.seq:
            continue
        if e.op is OpKind.WRITE:
            cov = covered.setdefault(e.inode, [])
            lo, hi = e.offset, e.offset + len(e.payload)
            if hi == lo:
                out_rev.append(e)
                continue
            parts = _subtract(cov, lo, hi)
            if not parts:
                continue
            if len(parts) == 1 and parts[0] != (lo, hi):
                a, b = parts[0]
                # keep the end offset when trimming from the front so the size effect is unchanged
                if b == hi:
                    e = replace(e, offset=a, payload=e.payload[a - lo:])
                elif _extends_size_safely(cov, hi):
                    e = replace(e, offset=a, payload=e.payload[a - lo : b - lo])
            cov.append((lo, hi))
            out_rev.append(e)
        elif e.op is OpKind.TRUNCATE:
            covered.setdefault(e.inode, []).append((e.offset, 1 << 62))
            out_rev.append(e)
        else:
            out_rev.append(e)
    out_rev.reverse()
    return out_rev


def _extends_size_safely(cov: list[tuple[int, int]], hi: int) -> bool:
    # trimming a tail is safe only if a later interval reaches at least ``hi``,
    # which it does whenever that tail is covered
    return any(b >= hi for _, b in cov)


# -- segments -----------------------------------------------------------------

@dataclass
class Segment:
    """A slice of a log ready to be written into a remote mirror."""

    log_id: str
    after_seq: int
    last_seq: int
    entries: list[LogEntry] = field(default_factory=list)
    raw: bool = True

    @property
    def blobs(self) -> list[tuple[int, bytes]]:
        return [(e.seq, e.encode()) for e in self.entries]

    @property
    def nbytes(self) -> int:
        return sum(e.size for e in self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)


def extract_segment(log: UpdateLog, up_to_seq: int, coalesced: bool = False,
                    after_seq: int | None = None) -> Segment:
    """Entries ``(after_seq, up_to_seq]`` (default: after the replicated watermark).

    ``up_to_seq`` must land on a COMMIT entry. In coalesced form the batch is
    rewritten with superseded entries removed and a fresh COMMIT describing
    the survivors.
    """
    after = log.replicated_seq if after_seq is None else after_seq
    if up_to_seq > log.tail_seq:
        raise LogError("segment beyond tail")
    if up_to_seq <= after:
        return Segment(log.rid, after, after)
    ents = log.entries(after, up_to_seq)
    if not coalesced:
        return Segment(log.rid, after, up_to_seq, ents, raw=True)
    out: list[LogEntry] = []
    for b in _split_batches(ents):
        body, marker = b[:-1], b[-1]
        kept = coalesce(body)
        m = marker.meta
        c = commit_entry(marker.seq, m["first"], m["last"], len(kept), marker.txn, marker.time)
        c.flags |= 1
        out.extend(kept)
        out.append(c)
    return Segment(log.rid, after, up_to_seq, out, raw=False)


def _split_batches(ents: list[LogEntry]) -> list[list[LogEntry]]:
    out, cur = [], []
    for e in ents:
        cur.append(e)
        if e.op is OpKind.COMMIT:
            out.append(cur)
            cur = []
    if cur:
        raise LogError("segment does not end on a COMMIT")
    return out


# -- digest -------------------------------------------------------------------

class DigestTarget(Protocol):
    def apply_batch(self, batch: TxnBatch, source: str) -> None: ...


@dataclass
class DigestReport:
    batches: int = 0
    entries: int = 0
    bytes: int = 0
    digested_seq: int = 0
    aborted: bool = False
    error: str = ""
    state_hash: str = ""


def verify(raw: list[tuple[bytes, bytes]]) -> list[LogEntry]:
    """Decode ``(header, payload)`` pairs, raising on the first bad checksum."""
    return [LogEntry.decode(h, p) for h, p in raw]


def digest(target: DigestTarget, entries: list[LogEntry], source: str = "") -> DigestReport:
    """Apply complete batches in seq order; each batch is atomic at the target.

    A failing batch (checksum, permission) aborts the digest at that batch,
    leaving earlier batches applied and the failing one untouched.
    """
    rep = DigestReport()
    for b in batches(entries):
        try:
            target.apply_batch(b, source)
        except (ChecksumError, PermissionError) as exc:
            rep.aborted, rep.error = True, str(exc)
            break
        except Exception as exc:
            from .errors import IntegrityError, PermissionDenied

            if isinstance(exc, (IntegrityError, PermissionDenied)):
                rep.aborted, rep.error = True, str(exc)
                break
            raise
        rep.batches += 1
        rep.entries += len(b.entries)
        rep.bytes += sum(e.size for e in b.entries)
        rep.digested_seq = b.last_seq
    return rep


# -- scratch image (reference semantics) --------------------------------------

ROOT_INO = 1


@dataclass
class _Node:
    kind: str
    mode: int = 0o755
    uid: int = 0
    gid: int = 0
    size: int = 0
    mtime: int = 0
    data: bytearray = field(default_factory=bytearray)
    entries: dict[str, int] = field(default_factory=dict)


class ScratchImage:
    """Minimal inode-level file system: the reference meaning of log entries."""

    def __init__(self, roots: dict[int, str] | None = None):
        self.inodes: dict[int, _Node] = {ROOT_INO: _Node("dir")}
        for ino, _ in (roots or {}).items():
            self.inodes.setdefault(ino, _Node("dir"))

    def apply(self, e: LogEntry) -> None:
        op, ino = e.op, e.inode
        if op in (OpKind.COMMIT, OpKind.WRAP):
            return
        if op in (OpKind.CREATE, OpKind.MKDIR):
            m = e.meta
            if ino not in self.inodes:
                self.inodes[ino] = _Node("dir" if op is OpKind.MKDIR else "file", m.get("mode", 0o644),
                                         m.get("uid", 0), m.get("gid", 0), mtime=e.time)
            p = self.inodes.get(m["parent"])
            if p is not None:
                p.entries[m["name"]] = ino
                p.mtime = e.time
        elif op is OpKind.UNLINK:
            m = e.meta
            p = self.inodes.get(m["parent"])
            if p is not None and p.entries.get(m["name"]) == ino:
                del p.entries[m["name"]]
                p.mtime = e.time
            self.inodes.pop(ino, None)
        elif op is OpKind.RENAME:
            m = e.meta
            sp, dp = self.inodes.get(m["sp"]), self.inodes.get(m["dp"])
            if sp is not None and sp.entries.get(m["sn"]) == ino:
                del sp.entries[m["sn"]]
                sp.mtime = e.time
            if dp is not None:
                victim = dp.entries.get(m["dn"])
                if victim is not None and victim != ino:
                    self.inodes.pop(victim, None)
                dp.entries[m["dn"]] = ino
                dp.mtime = e.time
        elif op is OpKind.WRITE:
            n = self.inodes.get(ino)
            if n is None:
                return
            end = e.offset + len(e.payload)
            if len(n.data) < end:
                n.data.extend(bytes(end - len(n.data)))
            n.data[e.offset:end] = e.payload
            n.size = max(n.size, end)
            n.mtime = e.time
        elif op is OpKind.TRUNCATE:
            n = self.inodes.get(ino)
            if n is None:
                return
            if e.offset < len(n.data):
                del n.data[e.offset:]
            n.size = e.offset
            n.mtime = e.time
        elif op is OpKind.SETATTR:
            n = self.inodes.get(ino)
            if n is None:
                return
            for k, v in e.meta.items():
                setattr(n, k, v)

    def apply_all(self, entries: Iterable[LogEntry]) -> "ScratchImage":
        for e in entries:
            self.apply(e)
        return self

    def tree(self) -> dict[str, tuple]:
        """Path -> (kind, mode, uid, gid, size, data) for everything reachable from the root."""
        out: dict[str, tuple] = {}

        def walk(ino: int, path: str) -> None:
            n = self.inodes[ino]
            data = bytes(n.data[: n.size]).ljust(n.size, b"\0") if n.kind == "file" else b""
            out[path] = (n.kind, n.mode, n.uid, n.gid, n.size if n.kind == "file" else 0, data)
            for name, child in sorted(n.entries.items()):
                if child in self.inodes:
                    walk(child, path.rstrip("/") + "/" + name)

        walk(ROOT_INO, "/")
        return out


# -- resize (two-phase commit) -------------------------------------------------

class ResizeParticipant(Protocol):
    def prepare_resize(self, log_id: str, capacity: int) -> bool: ...
    def commit_resize(self, log_id: str, capacity: int) -> None: ...
    def abort_resize(self, log_id: str) -> None: ...


def next_capacity(current: int, threshold: int, increment: int) -> int:
    """Multiplicative growth below ``threshold``, fixed increments above it."""
    return current * 2 if current < threshold else current + increment


def resize(participants: list[ResizeParticipant], log_id: str, capacity: int) -> bool:
    """Two-phase resize; returns True if committed at every participant."""
    prepared: list[ResizeParticipant] = []
    ok = True
    for p in participants:
        try:
            vote = p.prepare_resize(log_id, capacity)
        except NodeFailed:
            vote = False
        if not vote:
            ok = False
            break
        prepared.append(p)
    if not ok:
        for p in prepared:
            try:
                p.abort_resize(log_id)
            except NodeFailed:
                pass
        return False
    for p in prepared:
        p.commit_resize(log_id, capacity)
    return True
