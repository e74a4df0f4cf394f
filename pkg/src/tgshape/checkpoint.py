"""Binary checkpoint serialization for named parameter collections.

Layout (all integers little-endian):
  magic b"IMPW" | version u32 | count u32
  then per entry: name_len u16 | name utf-8 | rank u8 | dims u32 x rank |
  float32 payload in C order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

MAGIC = b"IMPW"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint payload."""


def save_checkpoint(path: str | Path, params: dict[str, Tensor]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, p in params.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:40]}...")
        arr = np.asarray(p.data, dtype=np.float32)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = arr.copy()  # ascontiguousarray would promote 0-d to 1-d
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        if off + 2 > len(buf):
            raise CheckpointError("truncated checkpoint (name length)")
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        if off + 1 > len(buf):
            raise CheckpointError("truncated checkpoint (rank)")
        rank = buf[off]
        off += 1
        dims = struct.unpack_from(f"<{rank}I", buf, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        nbytes = 4 * n
        if off + nbytes > len(buf):
            raise CheckpointError(f"truncated checkpoint (data for '{name}')")
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims)
        off += nbytes
        if name in out:
            raise CheckpointError(f"duplicate parameter name '{name}'")
        out[name] = arr.copy()
    if off != len(buf):
        raise CheckpointError("trailing bytes after final parameter")
    return out


def restore_into(params: dict[str, Tensor], loaded: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into an existing parameter dict, checking shape parity."""
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise CheckpointError(
            f"parameter name mismatch (missing={sorted(missing)[:4]}, extra={sorted(extra)[:4]})")
    for name, p in params.items():
        arr = loaded[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for '{name}': file {arr.shape} vs model {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
