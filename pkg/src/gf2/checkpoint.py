"""Versioned named-tensor container.

Layout: magic "GF2C", u32 version, u32 entry count, then per entry
{u16 name length, UTF-8 name, u8 dtype tag (0=f32), u8 rank, u32 dims...,
little-endian payload}; finally a u32-length-prefixed JSON blob holding the
config snapshot, RNG state and step counters.  Everything little-endian.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, CorruptEntry, ShapeMismatch, VersionMismatch

MAGIC = b"GF2C"
VERSION = 1
DTYPE_F32 = 0


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict):
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    buf += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb))
        buf += nb
        buf += struct.pack("<BB", DTYPE_F32, arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<I", dim)
        buf += arr.tobytes()
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf += struct.pack("<I", len(blob))
    buf += blob
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {VERSION}")
    (count,) = struct.unpack_from("<I", raw, 8)
    off = 12
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off : off + nlen].decode("utf-8")
            off += nlen
            dtype_tag, rank = struct.unpack_from("<BB", raw, off)
            off += 2
            if dtype_tag != DTYPE_F32:
                raise CorruptEntry(f"entry {name}: unknown dtype tag {dtype_tag}")
            dims = struct.unpack_from(f"<{rank}I", raw, off) if rank else ()
            off += 4 * rank
            n = int(np.prod(dims)) if dims else 1
            end = off + 4 * n
            if end > len(raw):
                raise CorruptEntry(f"entry {name}: payload overruns file")
            tensors[name] = np.frombuffer(raw[off:end], dtype="<f4").reshape(dims).copy()
            off = end
        (blob_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        meta = json.loads(raw[off : off + blob_len].decode("utf-8"))
    except struct.error as e:
        raise CorruptEntry(f"{path}: truncated ({e})") from e
    return tensors, meta


def assign_parameters(params: dict, entries: dict[str, np.ndarray], prefix: str = ""):
    """Copy checkpoint entries into parameter tensors, verifying shapes."""
    for name, p in params.items():
        key = f"{prefix}{name}"
        if key not in entries:
            raise CorruptEntry(f"checkpoint is missing tensor {key}")
        arr = entries[key]
        if arr.shape != p.data.shape:
            raise ShapeMismatch(
                f"tensor {key}: checkpoint {arr.shape} vs model {p.data.shape}")
        p.data = arr.astype(np.float32).copy()
