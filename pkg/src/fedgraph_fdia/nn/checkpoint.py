"""Binary weight checkpoints.

Layout (all integers little-endian)::

    b"FGCK" | u32 version | u32 header_len | header (UTF-8 JSON)
    u32 n_tensors
    repeated: u16 name_len | name (UTF-8) | u8 ndim | u32 dim * ndim | f64 data (C order)

The JSON header carries the model configuration and any scalar metadata
(round counter, optimizer step) so a file can be reloaded without side files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FGCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], header: dict | None = None):
    header_bytes = json.dumps(header or {}, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(header_bytes)), header_bytes,
              struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8", order="C")
        encoded = name.encode()
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path):
    """Returns ``(tensors, header)``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(data[pos:pos + hlen].decode())
    pos += hlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            tensors[name] = arr.astype(float)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint {path}") from exc
    if pos != len(data):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return tensors, header


def flatten(groups: dict[str, dict[str, np.ndarray]]):
    return {f"{g}/{k}": v for g, params in groups.items() for k, v in params.items()}


def unflatten(tensors: dict[str, np.ndarray]):
    groups: dict[str, dict[str, np.ndarray]] = {}
    for name, arr in tensors.items():
        group, _, key = name.partition("/")
        groups.setdefault(group, {})[key] = arr
    return groups
