"""Binary checkpoint container with a bit-exact round trip.

Layout (all integers little-endian):
  bytes 0-3   magic "BGFG"
  u32         format version (currently 1)
  u64         metadata length, then that many bytes of UTF-8 JSON
  u32         tensor count
  per tensor: u16 name length, name bytes, u8 dtype tag, u8 rank,
              u32 dims[rank], raw little-endian payload
Dtype tags: 0 = float64, 1 = float32, 2 = int64.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"BGFG"
VERSION = 1

_TAG_TO_DTYPE = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8")}
_KIND_TO_TAG = {("f", 8): 0, ("f", 4): 1, ("i", 8): 2}
_MAX_RANK = 8


def save_checkpoint(path, tensors: dict, metadata: dict) -> None:
    """Write named arrays plus JSON metadata; names are stored sorted so the
    same content always produces the same bytes."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<Q", len(meta)))
    chunks.append(meta)
    names = sorted(tensors)
    chunks.append(struct.pack("<I", len(names)))
    for name in names:
        arr = np.asarray(tensors[name])
        tag = _KIND_TO_TAG.get((arr.dtype.kind, arr.dtype.itemsize))
        if tag is None:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        if arr.ndim > _MAX_RANK:
            raise CheckpointError(f"tensor {name!r} has rank {arr.ndim} > {_MAX_RANK}")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]!r}...")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", tag, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        chunks.append(np.ascontiguousarray(arr, dtype=_TAG_TO_DTYPE[tag]).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint {self.path}: wanted {n} bytes at offset {self.pos}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors, metadata)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(blob, path)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} in {path}: not a checkpoint of this format")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (meta_len,) = r.unpack("<Q")
    meta_bytes = r.take(meta_len)
    try:
        metadata = json.loads(meta_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata block in {path}: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors: dict = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        tag, rank = r.unpack("<BB")
        if tag not in _TAG_TO_DTYPE:
            raise CheckpointError(f"unknown dtype tag {tag} for tensor {name!r} in {path}")
        if rank > _MAX_RANK:
            raise CheckpointError(f"tensor {name!r} has rank {rank} > {_MAX_RANK}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        dtype = _TAG_TO_DTYPE[tag]
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        payload = r.take(n_bytes)
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name!r} in {path}")
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if r.pos != len(blob):
        raise CheckpointError(f"trailing {len(blob) - r.pos} unread bytes in {path}")
    return tensors, metadata
