"""Parameter checkpoint container.

Layout (all integers little-endian uint32)::

    b"SAOOSC1"
    repeated until EOF:
        name_length, name bytes (utf-8), rank, rank x dim, prod(dims) x float64 (LE)
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SAOOSC1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | os.PathLike, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        for name, value in arrays.items():
            value = np.asarray(value, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(np.ascontiguousarray(value).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic, not a SAOOSC1 checkpoint")
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > len(blob):
                raise CheckpointError(f"{path}: truncated record {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    return out
