"""Writer for the binary embedding container consumed by the pipeline.

Mirror of the container wire format (little-endian): magic "DVSE",
version u16, modality u8, dim u32, count u64, then per record a u16 id
length, the UTF-8 id bytes, and dim float32 values. Version 1 carries the
plain modalities (text=0, audio=1, image=2); version 2 is reserved for fused
vectors (3), which this service never emits.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"DVSE"
HEADER = struct.Struct("<4sHBIQ")

MODALITY_CODES = {"text": 0, "audio": 1, "image": 2}


class WriterError(ValueError):
    pass


def write_embedding_file(
    path, modality: str, dim: int, records: Iterable[tuple[str, np.ndarray]]
) -> int:
    """Write (id, vector) records; returns the byte count. Atomic on success."""
    if modality not in MODALITY_CODES:
        raise WriterError(f"unknown modality {modality!r}")
    if dim < 1:
        raise WriterError(f"dim must be >= 1, got {dim}")
    records = list(records)
    seen = set()
    body = []
    for record_id, vector in records:
        if record_id in seen:
            raise WriterError(f"duplicate record id {record_id!r}")
        seen.add(record_id)
        vector = np.asarray(vector, dtype=np.float32).ravel()
        if vector.size != dim:
            raise WriterError(
                f"vector for {record_id!r} has length {vector.size}, expected {dim}"
            )
        raw_id = record_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise WriterError(f"id too long: {record_id[:40]!r}...")
        body.append(struct.pack("<H", len(raw_id)))
        body.append(raw_id)
        body.append(vector.astype("<f4", copy=False).tobytes())

    payload = HEADER.pack(MAGIC, 1, MODALITY_CODES[modality], dim, len(records))
    payload += b"".join(body)

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return len(payload)
