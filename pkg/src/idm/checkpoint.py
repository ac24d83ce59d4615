"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"IDMCKPT1"
    u32 text length, UTF-8 text section (key=value lines)
    repeated until EOF:
        u32 name length, name bytes (UTF-8)
        u32 rank, rank x u64 extents
        product(extents) x f64 payload, row-major
"""
from __future__ import annotations

import io
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"IDMCKPT1"


class CheckpointError(ValueError):
    pass


def encode(tensors: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    text = "".join(f"{k}={v}\n" for k, v in (meta or {}).items()).encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if blob[:8] != MAGIC:
        raise CheckpointError("bad magic: not an IDM checkpoint")
    pos = 8

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    (tlen,) = struct.unpack("<I", take(4))
    meta = {}
    for line in take(tlen).decode("utf-8").splitlines():
        if line:
            k, _, v = line.partition("=")
            meta[k] = v
    tensors: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        tensors[name] = arr
    return tensors, meta


def save(path, tensors: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(tensors, meta))
    os.replace(tmp, path)


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return decode(Path(path).read_bytes())
