"""Exception hierarchy shared by every layer of the simulator."""
from __future__ import annotations

import enum


class Errno(enum.Enum):
    ENOENT = "ENOENT"
    EEXIST = "EEXIST"
    EACCES = "EACCES"
    ENOSPC = "ENOSPC"
    ENOTDIR = "ENOTDIR"
    EISDIR = "EISDIR"
    ENOTEMPTY = "ENOTEMPTY"
    EXDEV = "EXDEV"
    EINVAL = "EINVAL"
    EBADF = "EBADF"
    ESTALE = "ESTALE"
    LEASE_TIMEOUT = "LEASE_TIMEOUT"


class FsError(Exception):
    """POSIX-level failure with a symbolic errno."""

    def __init__(self, errno: Errno, path: str = ""):
        super().__init__(f"{errno.value}: {path}" if path else errno.value)
        self.errno = errno
        self.path = path


class SimError(Exception):
    pass


class MediaError(SimError):
    pass


class UnknownRegion(MediaError):
    pass


class CapacityExceeded(MediaError):
    pass


class OutOfRange(MediaError):
    pass


class WrongTier(MediaError):
    pass


class NodeCrashed(SimError):
    """Unwinds execution that was running on a node at the instant it crashed."""

    def __init__(self, node: str):
        super().__init__(f"node {node} crashed")
        self.node = node


class ProcessCrashed(SimError):
    def __init__(self, pid: str):
        super().__init__(f"process {pid} crashed")
        self.pid = pid


class NetError(SimError):
    pass


class NodeFailed(NetError):
    """Connection error surfaced to a caller whose peer is down."""

    def __init__(self, node: str):
        super().__init__(f"node {node} failed")
        self.node = node


class RpcTimeout(NetError):
    pass


class UnregisteredRegion(NetError):
    pass


class LogError(SimError):
    pass


class LogFull(LogError):
    """Log has no room and a digest is already running."""


class ChecksumError(LogError):
    pass


class PermissionDenied(SimError):
    pass


class IntegrityError(SimError):
    pass


class ResizeAborted(SimError):
    pass


class ChainUnavailable(SimError):
    pass


class LeaseBusy(SimError):
    """A conflicting lease cannot be taken away right now; retry later.

    ``retry_at`` is set when the holder is dead and the lease only frees up
    at its expiry.
    """

    def __init__(self, scope: str, holder: str, retry_at: int | None = None):
        super().__init__(f"lease on {scope} busy (held by {holder})")
        self.scope = scope
        self.holder = holder
        self.retry_at = retry_at


class NotManager(SimError):
    pass


class SearchBoundExceeded(SimError):
    pass


class ScenarioInvalid(SimError):
    pass
