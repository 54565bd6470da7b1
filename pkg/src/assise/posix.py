"""Naive sequential model of the POSIX subset.

This is the executable reference used by the linearizability checker, the
prefix oracle and the conformance tests. It is deliberately simple: a path
keyed dictionary with no inodes, no caching and no persistence.

``unlink`` also removes empty directories (there is no ``rmdir`` in the
subset).
"""
from __future__ import annotations

import copy
import hashlib
from typing import Any

from .errors import Errno

Result = tuple[str, Any]
OK = "ok"
ERR = "err"


def split(path: str) -> list[str]:
    if not path.startswith("/"):
        raise ValueError(f"path must be absolute: {path!r}")
    return [p for p in path.split("/") if p]


def normalize(path: str) -> str:
    return "/" + "/".join(split(path))


def parent(path: str) -> str:
    parts = split(path)
    return "/" + "/".join(parts[:-1])


def basename(path: str) -> str:
    parts = split(path)
    return parts[-1] if parts else ""


def is_under(path: str, root: str) -> bool:
    """Component-wise containment (``/a/b`` is under ``/a``; ``/ab`` is not)."""
    p, r = split(path), split(root)
    return p[: len(r)] == r


class PosixModel:
    def __init__(self):
        self.files: dict[str, bytearray] = {}
        self.dirs: set[str] = {"/"}

    def copy(self) -> "PosixModel":
        return copy.deepcopy(self)

    # -- helpers -------------------------------------------------------------
    def _check_parent(self, path: str) -> Errno | None:
        par = parent(path)
        walk = "/"
        for comp in split(par):
            walk = walk.rstrip("/") + "/" + comp
            if walk in self.files:
                return Errno.ENOTDIR
            if walk not in self.dirs:
                return Errno.ENOENT
        return None

    def exists(self, path: str) -> bool:
        return path in self.files or path in self.dirs

    def _children(self, path: str) -> list[str]:
        pre = path.rstrip("/") + "/"
        names = set()
        for p in list(self.files) + list(self.dirs):
            if p != path and p.startswith(pre):
                rest = p[len(pre):]
                if "/" not in rest:
                    names.add(rest)
        return sorted(names)

    # -- operations ----------------------------------------------------------
    def apply(self, op: str, *args) -> Result:
        fn = getattr(self, "op_" + op)
        try:
            return OK, fn(*args)
        except _Fail as f:
            return ERR, f.errno.value

    # durability controls change nothing in the sequential namespace
    def op_fsync(self, *_):
        return None

    op_dsync = op_evict = op_fsync

    def op_create(self, path: str, mode: int = 0o644):
        path = normalize(path)
        err = self._check_parent(path)
        if err:
            raise _Fail(err)
        if self.exists(path):
            raise _Fail(Errno.EEXIST)
        self.files[path] = bytearray()
        return None

    def op_mkdir(self, path: str, mode: int = 0o755):
        path = normalize(path)
        err = self._check_parent(path)
        if err:
            raise _Fail(err)
        if self.exists(path):
            raise _Fail(Errno.EEXIST)
        self.dirs.add(path)
        return None

    def _file(self, path: str) -> bytearray:
        path = normalize(path)
        err = self._check_parent(path)
        if err:
            raise _Fail(err)
        if path in self.dirs:
            raise _Fail(Errno.EISDIR)
        if path not in self.files:
            raise _Fail(Errno.ENOENT)
        return self.files[path]

    def op_write(self, path: str, offset: int, data: bytes):
        f = self._file(path)
        end = offset + len(data)
        if len(f) < end:
            f.extend(bytes(end - len(f)))
        f[offset:end] = data
        return len(data)

    def op_read(self, path: str, offset: int, length: int):
        f = self._file(path)
        return bytes(f[offset : offset + length])

    def op_truncate(self, path: str, size: int):
        f = self._file(path)
        if size < len(f):
            del f[size:]
        else:
            f.extend(bytes(size - len(f)))
        return None

    def op_unlink(self, path: str):
        path = normalize(path)
        err = self._check_parent(path)
        if err:
            raise _Fail(err)
        if path in self.files:
            del self.files[path]
        elif path in self.dirs and path != "/":
            if self._children(path):
                raise _Fail(Errno.ENOTEMPTY)
            self.dirs.discard(path)
        else:
            raise _Fail(Errno.ENOENT)
        return None

    def op_rename(self, src: str, dst: str):
        src, dst = normalize(src), normalize(dst)
        for p in (src, dst):
            err = self._check_parent(p)
            if err:
                raise _Fail(err)
        if not self.exists(src) or src == "/":
            raise _Fail(Errno.ENOENT)
        if src == dst:
            return None
        src_dir = src in self.dirs
        if src_dir and is_under(dst, src):
            raise _Fail(Errno.EINVAL)
        if self.exists(dst):
            dst_dir = dst in self.dirs
            if src_dir and not dst_dir:
                raise _Fail(Errno.ENOTDIR)
            if dst_dir and not src_dir:
                raise _Fail(Errno.EISDIR)
            if dst_dir and self._children(dst):
                raise _Fail(Errno.ENOTEMPTY)
            self.files.pop(dst, None)
            self.dirs.discard(dst)
        if src_dir:
            moved_dirs = {d for d in self.dirs if is_under(d, src)}
            moved_files = {f for f in self.files if is_under(f, src)}
            for d in moved_dirs:
                self.dirs.discard(d)
            for d in moved_dirs:
                self.dirs.add(dst + d[len(src):])
            for f in moved_files:
                self.files[dst + f[len(src):]] = self.files.pop(f)
        else:
            self.files[dst] = self.files.pop(src)
        return None

    def op_readdir(self, path: str):
        path = normalize(path)
        err = self._check_parent(path)
        if err:
            raise _Fail(err)
        if path in self.files:
            raise _Fail(Errno.ENOTDIR)
        if path not in self.dirs:
            raise _Fail(Errno.ENOENT)
        return tuple(self._children(path))

    def op_stat(self, path: str):
        path = normalize(path)
        err = self._check_parent(path)
        if err:
            raise _Fail(err)
        if path in self.dirs:
            return ("dir", 0)
        if path in self.files:
            return ("file", len(self.files[path]))
        raise _Fail(Errno.ENOENT)

    # -- comparison ------------------------------------------------------------
    def tree(self, root: str = "/") -> dict[str, tuple]:
        """Path -> (kind, size, sha256) for everything at or under ``root``."""
        out = {}
        for d in self.dirs:
            if is_under(d, root):
                out[d] = ("dir", 0, "")
        for f, data in self.files.items():
            if is_under(f, root):
                out[f] = ("file", len(data), hashlib.sha256(bytes(data)).hexdigest())
        return dict(sorted(out.items()))

    def state_hash(self, root: str = "/") -> str:
        return tree_hash(self.tree(root))


def tree_hash(tree: dict[str, tuple]) -> str:
    h = hashlib.sha256()
    for path, (kind, size, digest) in sorted(tree.items()):
        h.update(f"{path}\0{kind}\0{size}\0{digest}\n".encode())
    return h.hexdigest()


class _Fail(Exception):
    def __init__(self, errno: Errno):
        self.errno = errno


MUTATING = {"create", "mkdir", "write", "truncate", "unlink", "rename"}
