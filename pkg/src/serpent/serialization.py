"""Binary checkpoint format: JSON metadata plus a named tensor table.

Layout (all integers little-endian, documented in README):

    magic   4 bytes  b"SRPT"
    version u32      currently 1
    meta    u32 length, then UTF-8 JSON (config echo, rng state, ...)
    count   u32      number of tensor records
    record  u16 name length, UTF-8 name
            u8  dtype tag (0 = float32)
            u8  rank
            u32 × rank extents
            row-major little-endian payload

Only float32 payloads exist today; the dtype tag keeps the format open.
"""

from __future__ import annotations

import json
import struct
from typing import Any

import numpy as np

MAGIC = b"SRPT"
VERSION = 1
DTYPE_F32 = 0


class CheckpointError(RuntimeError):
    """Malformed, truncated, or unsupported checkpoint file."""


def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None):
    """Write named float32 arrays plus a JSON metadata block."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float32)
            name_b = name.encode("utf-8")
            if len(name_b) > 0xFFFF:
                raise CheckpointError(f"tensor name too long: {name[:40]}...")
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4", copy=False).tobytes(order="C"))


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(buf)}")
    return buf


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read back (tensors, meta). Inverse of write_checkpoint."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4))
        meta = json.loads(_read_exact(f, meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, name_len).decode("utf-8")
            dtype_tag, rank = struct.unpack("<BB", _read_exact(f, 2))
            if dtype_tag != DTYPE_F32:
                raise CheckpointError(f"{path}: unknown dtype tag {dtype_tag} for '{name}'")
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            n = int(np.prod(shape, dtype=np.int64)) if rank else 1
            payload = _read_exact(f, 4 * n)
            arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
            tensors[name] = arr
    return tensors, meta
