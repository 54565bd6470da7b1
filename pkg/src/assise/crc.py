"""CRC32C (Castagnoli), used for log entry and journal record checksums."""
from __future__ import annotations

import numpy as np

_POLY = 0x82F63B78


def _table() -> np.ndarray:
    tab = np.zeros(256, dtype=np.uint32)
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ _POLY if c & 1 else c >> 1
        tab[i] = c
    return tab


_TABLE = _table()
_PYTABLE = [int(x) for x in _TABLE]

try:
    import numba

    @numba.njit(cache=True)
    def _crc_jit(tab, buf, crc):
        crc = ~crc & 0xFFFFFFFF
        for b in buf:
            crc = tab[(crc ^ b) & 0xFF] ^ (crc >> 8)
        return ~crc & 0xFFFFFFFF

    def crc32c(data: bytes, crc: int = 0) -> int:
        if not data:
            return crc
        return int(_crc_jit(_TABLE, np.frombuffer(data, dtype=np.uint8), np.uint32(crc)))

except ImportError:  # pragma: no cover

    def crc32c(data: bytes, crc: int = 0) -> int:
        crc = ~crc & 0xFFFFFFFF
        tab = _PYTABLE
        for b in data:
            crc = tab[(crc ^ b) & 0xFF] ^ (crc >> 8)
        return ~crc & 0xFFFFFFFF


def crc32c_reference(data: bytes, crc: int = 0) -> int:
    """Bitwise implementation, kept as an independent check of the fast path."""
    crc = ~crc & 0xFFFFFFFF
    for b in data:
        crc ^= b
        for _ in range(8):
            crc = (crc >> 1) ^ _POLY if crc & 1 else crc >> 1
    return ~crc & 0xFFFFFFFF
