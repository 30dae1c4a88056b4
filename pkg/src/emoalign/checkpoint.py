"""Binary tensor persistence with integrity checking.

Layout (all integers little-endian):

    magic   8 bytes  b"CLEPDG01"
    version u32
    count   u32                       number of tensors
    directory, per tensor:
        name_len u16, name UTF-8, dtype u8 (0 = f32), ndim u8,
        dims u32 x ndim, offset u64   byte offset into the payload
    payload  concatenated row-major IEEE-754 32-bit floats
    trailer  u64                      FNV-1a 64 checksum of the payload

Tensors are stored f32 on disk and returned f64 in memory, so a round trip
quantizes each element by at most one part in 2^24 (well inside the 2^-20
bound the tests pin). The format has no platform-dependent padding: a file
written anywhere loads bit-identically everywhere.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"CLEPDG01"
VERSION = 1
DTYPE_F32 = 0

FNV_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = FNV_BASIS
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays in directory order; order determines byte layout."""
    directory = bytearray()
    payload = bytearray()
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        raw = data.tobytes()
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {len(encoded)} bytes")
        directory += struct.pack("<H", len(encoded)) + encoded
        directory += struct.pack("<BB", DTYPE_F32, data.ndim)
        directory += struct.pack(f"<{data.ndim}I", *data.shape)
        directory += struct.pack("<Q", len(payload))
        payload += raw
    blob = (MAGIC + struct.pack("<II", VERSION, len(tensors))
            + bytes(directory) + bytes(payload)
            + struct.pack("<Q", fnv1a64(bytes(payload))))
    Path(path).write_bytes(blob)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes for {what} at offset "
                f"{self.pos}, file has {len(self.blob)}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read a checkpoint, verifying magic, version, layout, and checksum."""
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    r = _Reader(p.read_bytes())

    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic: expected {MAGIC!r}, actual {magic!r}")
    version, count = struct.unpack("<II", r.take(8, "version/count"))
    if version != VERSION:
        raise CheckpointError(f"bad version: expected {VERSION}, actual {version}")

    entries = []
    for i in range(count):
        (name_len,) = struct.unpack("<H", r.take(2, f"entry {i} name length"))
        name = r.take(name_len, f"entry {i} name").decode("utf-8")
        dtype, ndim = struct.unpack("<BB", r.take(2, f"entry {i} dtype/ndim"))
        if dtype != DTYPE_F32:
            raise CheckpointError(f"bad dtype tag for {name!r}: expected "
                                  f"{DTYPE_F32}, actual {dtype}")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"entry {i} shape"))
        (offset,) = struct.unpack("<Q", r.take(8, f"entry {i} offset"))
        entries.append((name, shape, offset))

    body = r.blob[r.pos:]
    if len(body) < 8:
        raise CheckpointError("truncated checkpoint: missing checksum trailer")
    payload, trailer = body[:-8], body[-8:]
    expected_size = sum(int(np.prod(s, dtype=np.int64)) * 4 for _, s, _ in entries)
    if len(payload) != expected_size:
        raise CheckpointError(f"truncated checkpoint: payload is {len(payload)} "
                              f"bytes, directory promises {expected_size}")
    (stated,) = struct.unpack("<Q", trailer)
    actual = fnv1a64(payload)
    if stated != actual:
        raise CheckpointError(f"checksum mismatch: expected {stated:#018x}, "
                              f"actual {actual:#018x}")

    out: dict[str, np.ndarray] = {}
    for name, shape, offset in entries:
        n = int(np.prod(shape, dtype=np.int64))
        if offset + 4 * n > len(payload):
            raise CheckpointError(f"tensor {name!r} overruns payload: offset "
                                  f"{offset} size {4 * n} vs {len(payload)}")
        flat = np.frombuffer(payload, dtype="<f4", count=n, offset=offset)
        out[name] = flat.astype(np.float64).reshape(shape)
    return out
