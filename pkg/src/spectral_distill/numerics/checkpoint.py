"""Parameter checkpoints: a flat little-endian binary container plus a text manifest.

Binary layout::

    b"SDCKPT01"  u32 record_count
    per record:  u32 name_len, utf-8 name, u32 ndim, u64 dim * ndim, f64 value * prod(dims)
"""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SDCKPT01"


def save_checkpoint(path, state: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<I", len(state))]
    lines = []
    for name, arr in state.items():
        arr = np.array(arr, dtype="<f8", order="C")  # keeps 0-d shapes, unlike ascontiguousarray
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        payload = arr.tobytes()
        chunks.append(payload)
        shape = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"{name}\t{shape}\t{hashlib.sha256(payload).hexdigest()[:16]}")
    path.write_bytes(b"".join(chunks))
    manifest = Path(str(path) + ".txt")
    manifest.write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (count,) = struct.unpack_from("<I", buf, 8)
    pos = 12
    state = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes after {count} records")
    return state
