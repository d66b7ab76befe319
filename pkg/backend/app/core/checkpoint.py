"""
Checkpoint persistence for model parameters.

Layout (all integers little-endian uint32):
    magic   b"D2DCKPT\\0"
    version
    count
    count x { name_len, name (utf-8), rank, extents..., float64 values (little-endian) }
"""
import logging
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from app.core.exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"D2DCKPT\x00"
VERSION = 1
_U32 = struct.Struct("<I")


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named float64 arrays; order follows the mapping."""
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(extent) for extent in arr.shape)
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode_checkpoint(payload: bytes) -> dict[str, np.ndarray]:
    if not payload.startswith(MAGIC):
        raise CheckpointError("bad magic: not a d2dce-lab checkpoint")
    offset = len(MAGIC)

    def read_u32() -> int:
        nonlocal offset
        if offset + 4 > len(payload):
            raise CheckpointError("truncated checkpoint")
        (value,) = _U32.unpack_from(payload, offset)
        offset += 4
        return value

    version = read_u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(read_u32()):
        name_len = read_u32()
        name = payload[offset:offset + name_len].decode("utf-8")
        offset += name_len
        shape = tuple(read_u32() for _ in range(read_u32()))
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(payload):
            raise CheckpointError(f"truncated values for tensor {name!r}")
        values = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=offset)
        tensors[name] = values.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{len(payload) - offset} trailing bytes after last tensor")
    return tensors


def save_checkpoint(path: Path, tensors: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(tensors))
    logger.info(f"Saved checkpoint with {len(tensors)} tensors to {path}")
    return path


def load_checkpoint(path: Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
