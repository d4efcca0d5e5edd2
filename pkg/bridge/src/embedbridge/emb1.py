"""Writer for the canonical EMB1 embedding file format.

The format is the wire contract with the evaluation toolkit (all integers
little-endian): magic ``EMB1`` | version u32 | dim u32 | record count u64 |
model_id (u32 length + UTF-8) | per record: subject_id, sample_id (u32 length
+ UTF-8 each), dim x f32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
VERSION = 1


def _text(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_emb1(path, model_id: str, dim: int,
               records: list[tuple[str, str, np.ndarray]]) -> None:
    """Write records as EMB1; vectors are cast to little-endian float32."""
    if not model_id:
        raise ValueError("model_id must be non-empty")
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<I", dim),
        struct.pack("<Q", len(records)),
        _text(model_id),
    ]
    seen = set()
    for subject_id, sample_id, vector in records:
        key = (subject_id, sample_id)
        if key in seen:
            raise ValueError(f"duplicate record key {key!r}")
        seen.add(key)
        vec = np.asarray(vector, dtype="<f4")
        if vec.shape != (dim,):
            raise ValueError(f"record {key!r}: expected {dim} components, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"record {key!r}: non-finite embedding components")
        parts.append(_text(subject_id))
        parts.append(_text(sample_id))
        parts.append(vec.tobytes())
    Path(path).write_bytes(b"".join(parts))
