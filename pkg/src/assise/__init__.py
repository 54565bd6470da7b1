"""A distributed file system simulator with client-local persistent-memory logs.

Processes log operations into node-local NVM, replicate them along per-subtree
chains, and digest them into shared file-system state. Everything runs on a
deterministic simulated clock.
"""
from .cluster import Cluster
from .config import ChainSpec, ClusterConfig, LatencyModel, Sizes, Timeouts
from .errors import Errno, FsError

__all__ = ["Cluster", "ClusterConfig", "ChainSpec", "Sizes", "Timeouts", "LatencyModel", "Errno", "FsError"]
