"""``TNS1`` tensor files: magic, u32 rank, u32 extents, little-endian f32 values."""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import IDKGError
from ..io import atomic_write_bytes, require_file

MAGIC = b"TNS1"


def to_f32_grid(x: np.ndarray) -> np.ndarray:
    """Round float64 values to the nearest float32 so persistence is lossless."""
    return np.asarray(x, dtype=np.float64).astype(np.float32).astype(np.float64)


def encode_tensor(x: np.ndarray) -> bytes:
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise IDKGError("refusing to persist a tensor with non-finite values")
    header = MAGIC + struct.pack("<I", x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape)
    return header + np.ascontiguousarray(x, dtype="<f4").tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if data[:4] != MAGIC:
        raise IDKGError("not a tensor file (bad magic)")
    (rank,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from(f"<{rank}I", data, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    if len(data) != offset + 4 * count:
        raise IDKGError(f"tensor file length {len(data)} does not match shape {shape}")
    return np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float64).reshape(shape)


def save_tensor(path: str | os.PathLike, x: np.ndarray) -> None:
    atomic_write_bytes(path, encode_tensor(x))


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    return decode_tensor(require_file(path).read_bytes())
