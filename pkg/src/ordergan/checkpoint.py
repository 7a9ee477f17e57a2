"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"OGAN"  u16 version
    repeated until EOF:
        u16 name_length, name (utf-8), u32 rows, u32 cols, rows*cols f64 (row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

MAGIC = b"OGAN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<H", VERSION)]
    for name, value in params.items():
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise CheckpointError(f"parameter {name!r} must be 2-D, got shape {arr.shape}")
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:40]}...")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<II", arr.shape[0], arr.shape[1]))
        chunks.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    return b"".join(chunks)


def loads(data: bytes) -> Dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic bytes, not an OGAN checkpoint")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 6
    out: Dict[str, np.ndarray] = {}
    while pos < len(data):
        try:
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            rows, cols = struct.unpack_from("<II", data, pos)
            pos += 8
        except struct.error as exc:
            raise CheckpointError(f"truncated checkpoint header at byte {pos}") from exc
        nbytes = rows * cols * 8
        if pos + nbytes > len(data):
            raise CheckpointError(f"truncated payload for {name!r}")
        out[name] = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).astype(np.float64).reshape(rows, cols)
        pos += nbytes
    return out


def save(path, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(params))


def load(path) -> Dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
