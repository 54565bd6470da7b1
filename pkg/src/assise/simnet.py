"""Deterministic in-process network: one-sided RDMA writes and RPCs.

Connections are per (src, dst) endpoint pair and deliver in FIFO order.
RDMA writes land in the destination region through :mod:`media` without
involving destination code, and complete at the source only once the
destination has persisted them. RPC handlers run synchronously "on" the
destination; a destination crash while handling surfaces at the caller as
:class:`NodeFailed` after the RPC timeout.

Every delivered message appends one tab-separated trace line::

    time  kind  src  dst  size  tag
"""
from __future__ import annotations

import enum
import hashlib
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Any, Callable

from .clock import SimClock
from .config import LatencyModel
from .errors import NetError, NodeCrashed, NodeFailed, UnregisteredRegion
from .media import Media, WriteTicket


class MsgKind(enum.Enum):
    RDMA_WRITE = "RDMA_WRITE"
    RPC_REQUEST = "RPC_REQUEST"
    RPC_REPLY = "RPC_REPLY"


@dataclass(frozen=True, order=True)
class Endpoint:
    node: str
    proc: str

    def __str__(self) -> str:
        return f"{self.node}/{self.proc}"


class ProcessGone(NetError):
    def __init__(self, ep: Endpoint):
        super().__init__(f"endpoint {ep} is gone")
        self.endpoint = ep


@dataclass
class Completion:
    src: Endpoint
    dst: Endpoint
    ticket: WriteTicket | None
    done_at: int
    failed: bool = False


Handler = Callable[[Endpoint, str, Any], Any]


def payload_size(payload: Any) -> int:
    if isinstance(payload, (bytes, bytearray, memoryview)):
        return len(payload)
    if isinstance(payload, dict):
        return 64 + sum(payload_size(v) for v in payload.values())
    if isinstance(payload, (list, tuple)):
        return 16 + sum(payload_size(v) for v in payload)
    return 16


class Network:
    def __init__(self, clock: SimClock, media: Media, latency: LatencyModel | None = None,
                 rpc_timeout: int = 1_000_000_000):
        self.clock = clock
        self.media = media
        self.latency = latency or media.latency
        self.rpc_timeout = rpc_timeout
        self.handlers: dict[Endpoint, Handler] = {}
        self.registrations: dict[str, tuple[Endpoint, set[Endpoint] | None]] = {}
        self.seq: dict[tuple[Endpoint, Endpoint], int] = defaultdict(int)
        self.trace: list[str] = []
        self.record_trace = True
        self.messages: Counter = Counter()
        self.remote_messages: Counter = Counter()
        self.bytes_by_tag: Counter = Counter()
        self.data_copies = 0

    # -- endpoints -----------------------------------------------------------
    def bind(self, ep: Endpoint, handler: Handler) -> None:
        self.handlers[ep] = handler

    def unbind(self, ep: Endpoint) -> None:
        self.handlers.pop(ep, None)

    def node_up(self, node: str) -> bool:
        return node not in self.media.down

    def register(self, owner: Endpoint, region_id: str, peers: list[Endpoint] | None = None) -> None:
        """Allow ``peers`` (``None`` means anyone) to RDMA-write ``region_id``."""
        self.media.region(region_id)
        self.registrations[region_id] = (owner, None if peers is None else set(peers))

    def allow(self, region_id: str, peer: Endpoint) -> None:
        owner, peers = self.registrations[region_id]
        if peers is not None:
            peers.add(peer)

    def deregister(self, region_id: str) -> None:
        self.registrations.pop(region_id, None)

    # -- tracing -------------------------------------------------------------
    def _log(self, kind: MsgKind, src: Endpoint, dst: Endpoint, size: int, tag: str) -> None:
        self.seq[(src, dst)] += 1
        self.messages[tag] += 1
        self.bytes_by_tag[tag] += size
        if src.node != dst.node:
            self.remote_messages[tag] += 1
        if self.record_trace:
            self.trace.append(f"{self.clock.now}\t{kind.value}\t{src}\t{dst}\t{size}\t{tag}")

    def trace_hash(self) -> str:
        return hashlib.sha256("\n".join(self.trace).encode()).hexdigest()

    def _one_way(self, src: Endpoint, dst: Endpoint, size: int) -> int:
        if src.node == dst.node:
            return self.latency.local_ipc_ns
        return self.latency.rpc_ns + int(size / self.latency.table["nvm_rdma"][2])

    def _caller_alive(self, src: Endpoint) -> None:
        """The caller's node may have crashed while a nested call was running."""
        if not self.node_up(src.node):
            raise NodeCrashed(src.node)

    # -- RDMA ----------------------------------------------------------------
    def rdma_write(self, src: Endpoint, dst: Endpoint, region_id: str, offset: int, data: bytes,
                   tag: str = "RDMA") -> Completion:
        reg = self.registrations.get(region_id)
        if reg is None or reg[0].node != dst.node or (reg[1] is not None and src not in reg[1]):
            raise UnregisteredRegion(f"{region_id} not registered for {src} at {dst}")
        if not self.node_up(dst.node):
            return Completion(src, dst, None, self.clock.now, failed=True)
        self._log(MsgKind.RDMA_WRITE, src, dst, len(data), tag)
        if src.node == dst.node:
            delay = self.latency.write_ns("nvm_numa", len(data))
        else:
            delay = self.latency.write_ns("nvm_rdma", len(data))
        try:
            ticket = self.media.write_persistent(region_id, offset, data, delay=delay)
        except NodeCrashed as e:
            if e.node != dst.node or src.node == dst.node:
                raise
            return Completion(src, dst, None, self.clock.now, failed=True)
        return Completion(src, dst, ticket, ticket.persist_at)

    def wait(self, c: Completion) -> None:
        """Block the source until the write is durable at the destination."""
        if c.failed or not self.node_up(c.dst.node):
            self.clock.advance(self.rpc_timeout)
            raise NodeFailed(c.dst.node)
        self.clock.advance_to(c.done_at)
        self.media.wait(c.ticket)

    def rdma_write_sync(self, src: Endpoint, dst: Endpoint, region_id: str, offset: int, data: bytes,
                        tag: str = "RDMA") -> None:
        self.wait(self.rdma_write(src, dst, region_id, offset, data, tag))

    # -- RPC -----------------------------------------------------------------
    def rpc(self, src: Endpoint, dst: Endpoint, tag: str, payload: Any = None, size: int | None = None) -> Any:
        size = payload_size(payload) if size is None else size
        if not self.node_up(dst.node):
            self._log(MsgKind.RPC_REQUEST, src, dst, size, tag)
            self.clock.advance(self.rpc_timeout)
            raise NodeFailed(dst.node)
        handler = self.handlers.get(dst)
        if handler is None:
            self.clock.advance(self.latency.local_ipc_ns if src.node == dst.node else self.rpc_timeout)
            raise ProcessGone(dst)
        self._log(MsgKind.RPC_REQUEST, src, dst, size, tag)
        self.clock.advance(self._one_way(src, dst, size))
        try:
            reply = handler(src, tag, payload)
        except NodeCrashed as e:
            if e.node != dst.node or src.node == dst.node:
                raise
            self.clock.advance(self.rpc_timeout)
            raise NodeFailed(dst.node) from None
        except Exception:
            self._caller_alive(src)
            raise
        self._caller_alive(src)
        rsize = payload_size(reply)
        self._log(MsgKind.RPC_REPLY, dst, src, rsize, tag)
        self.clock.advance(self._one_way(dst, src, rsize))
        return reply

    def read_into_requester_cache(self, src: Endpoint, dst: Endpoint, cache_region: str, slot_offset: int,
                                  request: Any, lo: int, hi: int, tag: str = "READ") -> bytes | None:
        """Remote read answered by RDMA-writing into the requester's cache.

        The handler at ``dst`` returns the whole enclosing block (or ``None``).
        The bytes ``[lo, hi)`` of the block are written first, then the
        remainder of the block as prefetch, then a small completion reply.
        """
        reg = self.registrations.get(cache_region)
        if reg is None or reg[0] != src:
            raise UnregisteredRegion(f"{cache_region} is not {src}'s registered read cache")
        if not self.node_up(dst.node):
            self._log(MsgKind.RPC_REQUEST, src, dst, 32, tag)
            self.clock.advance(self.rpc_timeout)
            raise NodeFailed(dst.node)
        handler = self.handlers.get(dst)
        if handler is None:
            raise ProcessGone(dst)
        self._log(MsgKind.RPC_REQUEST, src, dst, 32, tag)
        self.clock.advance(self._one_way(src, dst, 32))
        try:
            block = handler(src, tag, request)
        except NodeCrashed as e:
            if e.node != dst.node or src.node == dst.node:
                raise
            self.clock.advance(self.rpc_timeout)
            raise NodeFailed(dst.node) from None
        except Exception:
            self._caller_alive(src)
            raise
        self._caller_alive(src)
        if block is None:
            self._log(MsgKind.RPC_REPLY, dst, src, 8, tag + "_NACK")
            self.clock.advance(self._one_way(dst, src, 8))
            return None
        cls = "nvm_numa" if src.node == dst.node else "nvm_rdma"
        self._log(MsgKind.RDMA_WRITE, dst, src, hi - lo, tag + "_DATA")
        self.media.store(cache_region, slot_offset + lo, block[lo:hi])
        self.clock.advance(self.latency.read_ns(cls, hi - lo))
        rest = len(block) - (hi - lo)
        if rest:
            self._log(MsgKind.RDMA_WRITE, dst, src, rest, tag + "_PREFETCH")
            self.media.store(cache_region, slot_offset, block[:lo])
            self.media.store(cache_region, slot_offset + hi, block[hi:])
            self.clock.advance(int(rest / self.latency.table[cls][2]))
        self._log(MsgKind.RPC_REPLY, dst, src, 8, tag)
        self.clock.advance(self._one_way(dst, src, 8))
        self.data_copies += 1
        return bytes(block)
