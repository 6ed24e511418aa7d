"""UDLS: a minimal little-endian container for named float32 tensors.

Layout::

    b"UDLS"  u32 version (=1)  u32 count
    repeated count times:
        u16 name_len, name (UTF-8), u8 rank, u32 extent * rank,
        float32 payload, row-major

Decoding either returns every tensor or raises; partial loads never happen.
"""
from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

MAGIC = b"UDLS"
VERSION = 1
MAX_RANK = 4


class UdlsError(ValueError):
    pass


class BadMagicError(UdlsError):
    pass


class UnsupportedVersionError(UdlsError):
    pass


class TruncatedError(UdlsError):
    pass


class DuplicateNameError(UdlsError):
    pass


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialize ``tensors`` in mapping order."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    seen = set()
    for name, value in tensors.items():
        if name in seen:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        seen.add(name)
        arr = np.asarray(value)
        if arr.ndim > MAX_RANK:
            raise UdlsError(f"tensor {name!r} has rank {arr.ndim} > {MAX_RANK}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise UdlsError(f"tensor name too long: {name[:40]!r}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"stream truncated while reading {what} at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data: bytes) -> dict[str, np.ndarray]:
    r = _Reader(bytes(data))
    if len(data) >= 4 and bytes(data[:4]) != MAGIC:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    r.take(4, "magic")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported UDLS version {version}")
    (count,) = r.unpack("<I", "tensor count")
    out: dict[str, np.ndarray] = {}
    for k in range(count):
        (n,) = r.unpack("<H", f"name length of tensor {k}")
        try:
            name = bytes(r.take(n, f"name of tensor {k}")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise UdlsError(f"tensor {k} name is not UTF-8") from exc
        (rank,) = r.unpack("<B", f"rank of {name!r}")
        if rank > MAX_RANK:
            raise UdlsError(f"tensor {name!r} has rank {rank} > {MAX_RANK}")
        dims = r.unpack(f"<{rank}I", f"extents of {name!r}")
        size = int(np.prod(dims, dtype=np.int64))
        payload = r.take(4 * size, f"payload of {name!r}")
        if name in out:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(r.buf):
        raise UdlsError(f"{len(r.buf) - r.pos} trailing bytes after last tensor")
    return out


def save(path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(tensors))


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())
