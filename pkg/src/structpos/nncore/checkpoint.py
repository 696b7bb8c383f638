"""Binary checkpoint format for named float arrays.

Layout (all integers little-endian)::

    b"SPOSCKPT"  uint16 version
    uint32 meta_len   meta_len bytes of UTF-8 JSON
    uint32 count
    count x [uint16 name_len, name, uint8 ndim, ndim x uint32 dim, float32 data]
"""

from __future__ import annotations

import json
import logging
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from structpos.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"SPOSCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    """Decoded checkpoint contents."""

    meta: dict[str, Any]
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def save_checkpoint(
    path: str | Path,
    arrays: Mapping[str, np.ndarray],
    meta: Mapping[str, Any],
) -> Path:
    """Write ``arrays`` (in mapping order) and a JSON ``meta`` block to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(dict(meta), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(arrays)))
        for name, array in arrays.items():
            data = np.ascontiguousarray(array, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())
    logger.info("Wrote checkpoint %s (%d arrays)", path, len(arrays))
    return path


class _Reader:
    def __init__(self, payload: bytes) -> None:
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointError(f"Checkpoint truncated at byte {self.offset}")
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint written by ``save_checkpoint``.

    Raises:
        CheckpointError: On a bad magic, unknown version, or truncated file.
        OSError: If the file cannot be read.
    """
    reader = _Reader(Path(path).read_bytes())
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not a structpos checkpoint")
    (version,) = reader.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}")
    (meta_len,) = reader.unpack("<I")
    try:
        meta = json.loads(reader.take(meta_len).decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"Corrupt checkpoint metadata: {exc}") from exc

    (count,) = reader.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape).copy()
    if reader.offset != len(reader.payload):
        raise CheckpointError(f"{len(reader.payload) - reader.offset} trailing bytes in {path}")
    return Checkpoint(meta=meta, arrays=arrays)
