"""Binary weight files.

Layout (little-endian): magic ``b"SPDC"``, u32 version, u32 tensor count, then
per tensor: u16 name length, UTF-8 name, u8 rank, ``rank`` x u32 dims and the
float32 payload in row-major order.
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SPDC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, weights: Mapping[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(weights))]
    for name, arr in weights.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr, dtype="<f4", order="C")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}, expected {VERSION}")
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = take("<H")
        if pos + nlen > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        if name in out:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        (rank,) = take("<B")
        dims = take(f"<{rank}I")
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise CheckpointError(f"{path}: payload of {name!r} truncated")
        out[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).astype(np.float32)
        pos += nbytes
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def check_compatible(weights: Mapping[str, np.ndarray], expected: Mapping[str, np.ndarray]) -> None:
    """Raise listing every missing, unexpected or mis-shaped tensor."""
    problems = []
    for name, ref in expected.items():
        if name not in weights:
            problems.append(f"missing {name}")
        elif tuple(weights[name].shape) != tuple(ref.shape):
            problems.append(f"shape mismatch {name}: {tuple(weights[name].shape)} vs expected {tuple(ref.shape)}")
    problems += [f"unexpected {n}" for n in weights if n not in expected]
    if problems:
        raise CheckpointError("checkpoint does not match graph: " + "; ".join(problems))
