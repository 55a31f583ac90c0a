"""Binary parameter checkpoints.

Layout (little-endian)::

    b"ASDP"  u32 version
    u32 config_len, config_len bytes of UTF-8 JSON (run config echo)
    u32 tensor_count, then per tensor:
        u32 name_len, name bytes, u32 rank, rank x u32 dims, float64 data (row-major)
    u32 has_norm, and if 1: u32 length, float64 mean[length], float64 std[length]
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"ASDP"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict[str, Any] = field(default_factory=dict)
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    if ckpt.norm_mean is None:
        parts.append(struct.pack("<I", 0))
    else:
        mean = np.ascontiguousarray(ckpt.norm_mean, dtype="<f8")
        std = np.ascontiguousarray(ckpt.norm_std, dtype="<f8")
        parts.append(struct.pack("<II", 1, mean.size))
        parts += [mean.tobytes(), std.tobytes()]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint (bad magic)")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    def take_array(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal pos
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        return arr.astype(np.float64)

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = take("<I")
    config = json.loads(buf[pos : pos + cfg_len].decode("utf-8"))
    pos += cfg_len
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = buf[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        tensors[name] = take_array(tuple(dims))
    (has_norm,) = take("<I")
    mean = std = None
    if has_norm:
        (length,) = take("<I")
        mean = take_array((length,))
        std = take_array((length,))
    return Checkpoint(tensors, config, mean, std)
