"""Cluster configuration: topology, chains, timeouts, sizes and latencies.

Configuration files are YAML documents with a top-level ``version`` key.
Sizes accept suffixes (``16MiB``, ``4KiB``); durations accept ``s``, ``ms``,
``us`` and ``ns`` suffixes or bare seconds.
"""
from __future__ import annotations

import copy
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .clock import MS, NS, SEC, US

CONFIG_VERSION = 1

KiB = 1024
MiB = 1024 * KiB
GiB = 1024 * MiB

_SIZE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([KMG]i?B|B)?\s*$", re.I)
_TIME_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(ns|us|ms|s)?\s*$")
_SIZE_UNITS = {"b": 1, "kb": 1000, "mb": 1000**2, "gb": 1000**3, "kib": KiB, "mib": MiB, "gib": GiB}
_TIME_UNITS = {"ns": NS, "us": US, "ms": MS, "s": SEC}


def parse_size(v: Any) -> int:
    if isinstance(v, (int, float)):
        return int(v)
    m = _SIZE_RE.match(str(v))
    if not m:
        raise ValueError(f"bad size: {v!r}")
    return int(float(m.group(1)) * _SIZE_UNITS[(m.group(2) or "B").lower()])


def parse_duration(v: Any) -> int:
    """Return nanoseconds. Bare numbers are seconds."""
    if isinstance(v, (int, float)):
        return int(v * SEC)
    m = _TIME_RE.match(str(v))
    if not m:
        raise ValueError(f"bad duration: {v!r}")
    return int(float(m.group(1)) * _TIME_UNITS[m.group(2) or "s"])


# Access classes, fastest first. Values are (read ns, write ns, read GB/s, write GB/s)
# taken from the memory/storage hierarchy measurements (May 2020).
ACCESS_CLASSES = ("dram", "nvm_local", "nvm_numa", "nvm_kernel", "nvm_rdma", "ssd")

DEFAULT_LATENCIES: dict[str, tuple[float, float, float, float]] = {
    "dram": (82, 82, 107.0, 80.0),
    "nvm_local": (175, 94, 32.0, 11.2),
    "nvm_numa": (230, 230, 4.8, 7.4),
    "nvm_kernel": (600, 1000, 32.0, 11.2),
    "nvm_rdma": (3000, 8000, 3.8, 3.8),
    "ssd": (10000, 10000, 2.4, 2.0),
}


@dataclass
class LatencyModel:
    table: dict[str, tuple[float, float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_LATENCIES)
    )
    rpc_ns: int = 5000  # one-way software overhead of an RPC hop
    local_ipc_ns: int = 600  # LibFS <-> local KernFS call

    def read_ns(self, cls: str, nbytes: int = 0) -> int:
        base, _, bw, _ = self.table[cls]
        return int(base + nbytes / bw)

    def write_ns(self, cls: str, nbytes: int = 0) -> int:
        _, base, _, bw = self.table[cls]
        return int(base + nbytes / bw)

    def ordering(self) -> list[str]:
        return sorted(self.table, key=lambda c: self.table[c][0])


@dataclass
class Timeouts:
    heartbeat_interval: int = 1 * SEC
    heartbeat_timeout: int = 1 * SEC
    rpc_timeout: int = 1 * SEC
    lease_timeout: int = 10 * SEC
    grace_period: int = 1 * SEC
    manager_expiry: int = 5 * SEC
    os_recovery_delay: int = 1660 * MS
    process_restart_delay: int = 0


@dataclass
class Sizes:
    block: int = 4 * KiB
    log_capacity: int = 16 * MiB
    read_cache: int = 8 * MiB
    hot_capacity: int = 64 * MiB
    reserve_capacity: int = 64 * MiB
    cold_capacity: int = 1 * GiB
    nvm_budget: int = 4 * GiB
    digest_threshold: float = 0.7  # digest once this fraction of the log is used
    hot_high_watermark: float = 0.9
    hot_low_watermark: float = 0.7
    resize_threshold: int = 256 * MiB
    resize_increment: int = 64 * MiB
    prefetch_cold: int = 256 * KiB
    prefetch_remote: int = 4 * KiB
    journal_capacity: int = 1 * GiB


@dataclass
class ChainSpec:
    subtree: str
    replicas: list[str]
    reserve: str | None = None

    def __post_init__(self):
        if not self.replicas:
            raise ValueError(f"chain for {self.subtree} has no replicas")
        if self.reserve is not None and self.reserve in self.replicas:
            raise ValueError("reserve replica cannot also be a cache replica")
        if len(set(self.replicas)) != len(self.replicas):
            raise ValueError("duplicate replica in chain")

    def members(self) -> list[str]:
        return self.replicas + ([self.reserve] if self.reserve else [])


@dataclass
class ClusterConfig:
    nodes: list[str] = field(default_factory=lambda: ["n0", "n1"])
    chains: dict[str, ChainSpec] = field(default_factory=dict)
    mode: str = "pessimistic"
    coalesce: bool = True
    lease_unit_depth: int = 1
    single_manager: str | None = None
    timeouts: Timeouts = field(default_factory=Timeouts)
    sizes: Sizes = field(default_factory=Sizes)
    latency: LatencyModel = field(default_factory=LatencyModel)
    version: int = CONFIG_VERSION

    def __post_init__(self):
        if not self.chains:
            self.chains = {"/": ChainSpec("/", list(self.nodes))}
        if "/" not in self.chains:
            raise ValueError("the root subtree must be mapped to a chain")
        if self.mode not in ("pessimistic", "optimistic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        for spec in self.chains.values():
            for n in spec.members():
                if n not in self.nodes:
                    raise ValueError(f"chain {spec.subtree} names unknown node {n}")

    def chain_for(self, path: str) -> ChainSpec:
        best = self.chains["/"]
        for root, spec in self.chains.items():
            if _under(path, root) and len(root) > len(best.subtree):
                best = spec
        return best

    def copy(self) -> "ClusterConfig":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["chains"] = {k: {"replicas": v.replicas, "reserve": v.reserve} for k, v in self.chains.items()}
        d["timeouts"] = {k: f"{v}ns" for k, v in d["timeouts"].items()}  # bare numbers would read as seconds
        d["latency"] = {
            "table": {k: list(v) for k, v in self.latency.table.items()},
            "rpc_ns": self.latency.rpc_ns,
            "local_ipc_ns": self.latency.local_ipc_ns,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version}")
        nodes = list(d.pop("nodes", ["n0", "n1"]))
        chains = {}
        for root, spec in (d.pop("chains", None) or {}).items():
            if isinstance(spec, list):
                spec = {"replicas": spec}
            chains[root] = ChainSpec(root, list(spec["replicas"]), spec.get("reserve"))
        td = d.pop("timeouts", None) or {}
        sd = d.pop("sizes", None) or {}
        for name, sect, known in (("timeouts", td, Timeouts.__dataclass_fields__),
                                  ("sizes", sd, Sizes.__dataclass_fields__)):
            if set(sect) - set(known):
                raise ValueError(f"unknown {name} keys: {sorted(set(sect) - set(known))}")
        t = Timeouts(**{k: parse_duration(v) for k, v in td.items()})
        s = Sizes(
            **{
                k: (float(v) if isinstance(Sizes.__dataclass_fields__[k].default, float) else parse_size(v))
                for k, v in sd.items()
            }
        )
        ld = d.pop("latency", None) or {}
        lat = LatencyModel()
        for k, v in (ld.get("table") or {}).items():
            lat.table[k] = tuple(float(x) for x in v)
        if "rpc_ns" in ld:
            lat.rpc_ns = int(ld["rpc_ns"])
        if "local_ipc_ns" in ld:
            lat.local_ipc_ns = int(ld["local_ipc_ns"])
        unknown = set(d) - {"mode", "coalesce", "lease_unit_depth", "single_manager"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(nodes=nodes, chains=chains, timeouts=t, sizes=s, latency=lat, **d)

    @classmethod
    def load(cls, path: str | Path) -> "ClusterConfig":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f) or {})


def _under(path: str, root: str) -> bool:
    if root == "/":
        return path.startswith("/")
    return path == root or path.startswith(root.rstrip("/") + "/")
