"""Binary parameter checkpoints.

Layout (little-endian)::

    magic   b"CPNN"            4 bytes
    version uint16             currently 1
    digest  sha256 of config   32 bytes
    count   uint32
    count x (name_len uint16, name utf-8, ndim uint8, ndim x uint32 dims)
    raw float32 values of every entry, in table order
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CPNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_digest(config: dict) -> bytes:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).digest()


def encode(state: dict[str, np.ndarray], config: dict) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION), config_digest(config), struct.pack("<I", len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in state.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(blob: bytes, config: dict | None = None) -> tuple[dict[str, np.ndarray], bytes]:
    """Return ``(state, digest)``; if ``config`` is given its digest must match."""
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = blob[6:38]
    if config is not None and digest != config_digest(config):
        raise CheckpointError("checkpoint was written for a different configuration")
    (count,) = struct.unpack_from("<I", blob, 38)
    pos = 42
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        table.append((name, shape))
    state = {}
    for name, shape in table:
        size = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
        pos += 4 * size
    if pos != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return state, digest


def save(path: str | Path, state: dict[str, np.ndarray], config: dict) -> None:
    Path(path).write_bytes(encode(state, config))


def load(path: str | Path, config: dict | None = None) -> tuple[dict[str, np.ndarray], bytes]:
    return decode(Path(path).read_bytes(), config)
