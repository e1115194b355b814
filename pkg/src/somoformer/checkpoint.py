"""Binary checkpoint format.

Layout (little-endian)::

    b"SMF1" | u32 version | u64 n | n bytes UTF-8 JSON config
    repeated: u16 name_len | name | u8 rank | u64 dim * rank | float64 data
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SMF1"
VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is corrupt, truncated or of an unsupported version."""


def write_checkpoint(path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(blob)), blob]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        key = name.encode("utf-8")
        if len(key) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"parameter {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated while reading {what} at byte {pos}")
        out = buf[pos:pos + n]
        pos += n
        return out

    magic = take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (this reader handles {VERSION})")
    (n,) = struct.unpack("<Q", take(8, "config length"))
    try:
        config = json.loads(take(n, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: config block is not valid JSON ({exc})") from None
    arrays = {}
    while pos < len(buf):
        (klen,) = struct.unpack("<H", take(2, "name length"))
        name = take(klen, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"rank of {name!r}"))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, f"shape of {name!r}"))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(8 * count, f"data of {name!r}"), dtype="<f8")
        arrays[name] = data.astype(np.float64).reshape(shape)
    return config, arrays
