"""Checkpoint format ``VCK1`` (little-endian, read until EOF):

magic (4 bytes), then per parameter: u16 path_len, UTF-8 path bytes,
u32 rank, rank * u32 dims, float32 payload row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import Tensor

_MAGIC = b"VCK1"


def save_checkpoint(path: str | Path, params: dict[str, Tensor | np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        for key, value in params.items():
            data = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype=np.float32)
            encoded = key.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic, expected {_MAGIC!r}")
    offset = 4
    params: dict[str, np.ndarray] = {}
    while offset < len(raw):
        if offset + 2 > len(raw):
            raise FormatError(f"{path}: truncated parameter header")
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        key = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if offset + 4 > len(raw):
            raise FormatError(f"{path}: truncated rank for {key!r}")
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if offset + 4 * rank > len(raw):
            raise FormatError(f"{path}: truncated dims for {key!r}")
        dims = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        nbytes = 4 * count
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: truncated payload for {key!r}")
        if key in params:
            raise FormatError(f"{path}: duplicate parameter {key!r}")
        params[key] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims).copy()
        offset += nbytes
    return params
