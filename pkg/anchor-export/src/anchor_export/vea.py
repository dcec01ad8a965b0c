"""Writer for the VEA1 anchor file format (little-endian).

Layout: magic ``VEA1``, u32 num_classes, u32 d_anc, then per class:
u16 name_len, UTF-8 name bytes, u32 n_c, n_c * d_anc float32 row-major.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

_MAGIC = b"VEA1"


class VeaError(ValueError):
    pass


def encode_anchor_file(classes: list[str], vectors: dict[str, np.ndarray]) -> bytes:
    if len(set(classes)) != len(classes):
        raise VeaError("duplicate class name")
    dims = set()
    blobs = [_MAGIC]
    for name in classes:
        vecs = np.ascontiguousarray(vectors[name], dtype=np.float32)
        if vecs.ndim != 2 or vecs.shape[0] < 1:
            raise VeaError(f"class {name!r} needs at least one embedding")
        if not np.isfinite(vecs).all():
            raise VeaError(f"class {name!r} has non-finite embeddings")
        if (np.abs(vecs).sum(axis=1) == 0.0).any():
            raise VeaError(f"class {name!r} has an all-zero embedding")
        dims.add(vecs.shape[1])
    if len(dims) != 1:
        raise VeaError(f"embedding width differs across classes: {sorted(dims)}")
    d_anc = dims.pop()
    blobs.append(struct.pack("<II", len(classes), d_anc))
    for name in classes:
        vecs = np.ascontiguousarray(vectors[name], dtype=np.float32)
        encoded = name.encode("utf-8")
        blobs.append(struct.pack("<H", len(encoded)))
        blobs.append(encoded)
        blobs.append(struct.pack("<I", vecs.shape[0]))
        blobs.append(vecs.tobytes())
    return b"".join(blobs)


def write_anchor_file(path: str | Path, classes: list[str], vectors: dict[str, np.ndarray]) -> None:
    """Atomic write: the target either keeps its old content or is complete."""
    path = Path(path)
    payload = encode_anchor_file(classes, vectors)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".vea.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
