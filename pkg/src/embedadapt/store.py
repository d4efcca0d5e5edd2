"""Typed containers and bit-exact serialization for embedding sets.

Embedding vectors are stored and serialized as little-endian 32-bit floats;
numerical work on them accumulates in 64-bit. Containers are immutable after
construction and validate their invariants eagerly, so any
:class:`~embedadapt.store.EmbeddingSet` reachable by callers is well formed.

Binary formats (all integers little-endian):

``EMB1``  magic ``EMB1`` | version u32 | dim u32 | record count u64 |
          model_id (u32 length + UTF-8) | per record: subject_id (u32 len +
          UTF-8), sample_id (u32 len + UTF-8), dim x f32.

``EMB2``  paired embeddings: magic ``EMB2`` | version u32 | dim_source u32 |
          dim_target u32 | pair count u64 | source_model_id | target_model_id
          (length-prefixed UTF-8) | per pair: subject_id, sample_id
          (length-prefixed UTF-8), dim_source x f32, dim_target x f32.

A CSV import/export (header ``subject_id,sample_id,e0..e{D-1}``) is provided
for interop; the binary format is canonical.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    CorruptionError,
    DegenerateInputError,
    FormatError,
    PairingError,
    ValidationError,
)

logger = logging.getLogger(__name__)

EMB_MAGIC = b"EMB1"
PAIR_MAGIC = b"EMB2"
FORMAT_VERSION = 1

Key = tuple[str, str]


def _as_float32_vector(vector, dim: int, key: Key) -> np.ndarray:
    arr = np.asarray(vector, dtype=np.float32)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise ValidationError(
            f"record {key!r}: expected vector of dimension {dim}, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"record {key!r}: vector contains non-finite components")
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class EmbeddingRecord:
    """One labeled embedding: a (subject, sample) key and its vector."""

    subject_id: str
    sample_id: str
    vector: np.ndarray

    @property
    def key(self) -> Key:
        return (self.subject_id, self.sample_id)


class EmbeddingSet:
    """Ordered, validated collection of embeddings from one extractor model.

    Parameters
    ----------
    model_id : str
        Non-empty identifier of the extractor that produced the vectors.
    dim : int
        Embedding dimension shared by every record.
    records : iterable of EmbeddingRecord or (subject_id, sample_id, vector)
        Vectors are coerced to float32 and checked for finiteness; keys must
        be unique.
    """

    def __init__(self, model_id: str, dim: int, records: Iterable = ()) -> None:
        if not isinstance(model_id, str) or not model_id:
            raise ValidationError("model_id must be a non-empty string")
        if not isinstance(dim, int) or dim <= 0:
            raise ValidationError(f"dim must be a positive integer, got {dim!r}")
        normalized: list[EmbeddingRecord] = []
        seen: set[Key] = set()
        for rec in records:
            if isinstance(rec, EmbeddingRecord):
                subject_id, sample_id, vector = rec.subject_id, rec.sample_id, rec.vector
            else:
                subject_id, sample_id, vector = rec
            key = (str(subject_id), str(sample_id))
            if key in seen:
                raise ValidationError(f"duplicate (subject_id, sample_id) key {key!r}")
            seen.add(key)
            vec = _as_float32_vector(vector, dim, key)
            normalized.append(EmbeddingRecord(key[0], key[1], vec))
        self._model_id = model_id
        self._dim = dim
        self._records = tuple(normalized)
        self._matrix: np.ndarray | None = None

    @classmethod
    def from_matrix(cls, model_id: str, keys: Sequence[Key], matrix: np.ndarray) -> "EmbeddingSet":
        """Build a set from an (N, D) array; rows become record vectors."""
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2:
            raise ValidationError(f"expected a 2-D matrix, got shape {matrix.shape}")
        if len(keys) != matrix.shape[0]:
            raise ValidationError(
                f"{len(keys)} keys for {matrix.shape[0]} matrix rows"
            )
        return cls(
            model_id,
            int(matrix.shape[1]),
            ((s, i, matrix[row]) for row, (s, i) in enumerate(keys)),
        )

    @property
    def model_id(self) -> str:
        return self._model_id

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def records(self) -> tuple[EmbeddingRecord, ...]:
        return self._records

    def keys(self) -> list[Key]:
        return [rec.key for rec in self._records]

    def matrix(self) -> np.ndarray:
        """All vectors stacked to an (N, dim) float32 array (cached, read-only)."""
        if self._matrix is None:
            if self._records:
                mat = np.stack([rec.vector for rec in self._records])
            else:
                mat = np.empty((0, self._dim), dtype=np.float32)
            mat.flags.writeable = False
            self._matrix = mat
        return self._matrix

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[EmbeddingRecord]:
        return iter(self._records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self._model_id == other._model_id
            and self._dim == other._dim
            and self.keys() == other.keys()
            and np.array_equal(self.matrix(), other.matrix())
        )

    def __repr__(self) -> str:
        return (
            f"EmbeddingSet(model_id={self._model_id!r}, dim={self._dim}, "
            f"records={len(self._records)})"
        )


class PairedEmbeddings:
    """Aligned (source, target) vector pairs keyed by (subject, sample)."""

    def __init__(
        self,
        source_model_id: str,
        target_model_id: str,
        keys: Sequence[Key],
        source_matrix: np.ndarray,
        target_matrix: np.ndarray,
    ) -> None:
        source_matrix = np.asarray(source_matrix, dtype=np.float32)
        target_matrix = np.asarray(target_matrix, dtype=np.float32)
        if source_matrix.ndim != 2 or target_matrix.ndim != 2:
            raise ValidationError("source/target matrices must be 2-D")
        n = len(keys)
        if source_matrix.shape[0] != n or target_matrix.shape[0] != n:
            raise ValidationError("keys and matrices disagree on pair count")
        if n < 1:
            raise ValidationError("paired embeddings require at least one pair")
        if len(set(keys)) != n:
            raise ValidationError("pair keys must be unique")
        for name, mat in (("source", source_matrix), ("target", target_matrix)):
            if not np.all(np.isfinite(mat)):
                raise ValidationError(f"{name} vectors contain non-finite components")
        self.source_model_id = source_model_id
        self.target_model_id = target_model_id
        self._keys = [(str(s), str(i)) for s, i in keys]
        self._source = np.ascontiguousarray(source_matrix)
        self._target = np.ascontiguousarray(target_matrix)
        self._source.flags.writeable = False
        self._target.flags.writeable = False

    @property
    def dim_source(self) -> int:
        return int(self._source.shape[1])

    @property
    def dim_target(self) -> int:
        return int(self._target.shape[1])

    @property
    def keys(self) -> list[Key]:
        return list(self._keys)

    @property
    def source_matrix(self) -> np.ndarray:
        return self._source

    @property
    def target_matrix(self) -> np.ndarray:
        return self._target

    def pairs(self) -> Iterator[tuple[Key, np.ndarray, np.ndarray]]:
        for i, key in enumerate(self._keys):
            yield key, self._source[i], self._target[i]

    def select(self, indices: Sequence[int]) -> "PairedEmbeddings":
        """New PairedEmbeddings holding the given rows, in the given order."""
        idx = np.asarray(indices, dtype=np.intp)
        return PairedEmbeddings(
            self.source_model_id,
            self.target_model_id,
            [self._keys[i] for i in idx],
            self._source[idx],
            self._target[idx],
        )

    def __len__(self) -> int:
        return len(self._keys)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PairedEmbeddings):
            return NotImplemented
        return (
            self.source_model_id == other.source_model_id
            and self.target_model_id == other.target_model_id
            and self._keys == other._keys
            and np.array_equal(self._source, other._source)
            and np.array_equal(self._target, other._target)
        )

    def __repr__(self) -> str:
        return (
            f"PairedEmbeddings({self.source_model_id!r} -> {self.target_model_id!r}, "
            f"n={len(self._keys)}, dims={self.dim_source}x{self.dim_target})"
        )


def l2_normalize(embeddings: EmbeddingSet) -> EmbeddingSet:
    """Scale every vector to unit Euclidean norm; labels are preserved.

    Raises
    ------
    DegenerateInputError
        If any vector has zero norm (the offending key is named).
    """
    mat = embeddings.matrix().astype(np.float64)
    norms = np.linalg.norm(mat, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        key = embeddings.records[int(zero[0])].key
        raise DegenerateInputError(f"cannot normalize zero vector at key {key!r}")
    out = (mat / norms[:, None]).astype(np.float32)
    return EmbeddingSet.from_matrix(embeddings.model_id, embeddings.keys(), out)


def pair(source: EmbeddingSet, target: EmbeddingSet) -> PairedEmbeddings:
    """Align two sets on their common (subject, sample) keys, in source order.

    Raises
    ------
    PairingError
        If the key sets are disjoint (no adapter training data exists).
    """
    target_index = {rec.key: i for i, rec in enumerate(target.records)}
    matched: list[tuple[Key, int, int]] = []
    for i, rec in enumerate(source.records):
        j = target_index.get(rec.key)
        if j is not None:
            matched.append((rec.key, i, j))
    if not matched:
        raise PairingError(
            f"no common keys between {source.model_id!r} ({len(source)} records) "
            f"and {target.model_id!r} ({len(target)} records)"
        )
    logger.info(
        "paired %d keys (source has %d, target has %d)",
        len(matched), len(source), len(target),
    )
    keys = [key for key, _, _ in matched]
    src_rows = np.asarray([i for _, i, _ in matched], dtype=np.intp)
    tgt_rows = np.asarray([j for _, _, j in matched], dtype=np.intp)
    return PairedEmbeddings(
        source.model_id,
        target.model_id,
        keys,
        source.matrix()[src_rows],
        target.matrix()[tgt_rows],
    )


class _Reader:
    """Cursor over a byte buffer that raises typed errors on underflow."""

    def __init__(self, data: bytes, path: str) -> None:
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CorruptionError(
                f"{self.path}: truncated file (needed {n} bytes at offset {self.pos})"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def text(self) -> str:
        n = self.u32()
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptionError(f"{self.path}: invalid UTF-8 in string field") from exc

    def f32_array(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count)

    def expect_eof(self) -> None:
        if self.pos != len(self.data):
            raise CorruptionError(
                f"{self.path}: {len(self.data) - self.pos} trailing bytes after payload"
            )


def _pack_text(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _check_magic_version(reader: _Reader, magic: bytes) -> None:
    got = reader.take(4)
    if got != magic:
        raise FormatError(
            f"{reader.path}: bad magic {got!r} (expected {magic!r})"
        )
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{reader.path}: unsupported format version {version} "
            f"(supported: {FORMAT_VERSION})"
        )


def write_embeddings(embeddings: EmbeddingSet, path) -> None:
    """Serialize a set to the canonical EMB1 binary format (deterministic)."""
    # Containers validate at construction; re-check key uniqueness so a file
    # can never be produced from a mutated or hand-rolled instance.
    keys = embeddings.keys()
    if len(set(keys)) != len(keys):
        raise ValidationError("duplicate (subject_id, sample_id) keys; refusing to write")
    parts = [
        EMB_MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<I", embeddings.dim),
        struct.pack("<Q", len(embeddings)),
        _pack_text(embeddings.model_id),
    ]
    for rec in embeddings.records:
        parts.append(_pack_text(rec.subject_id))
        parts.append(_pack_text(rec.sample_id))
        parts.append(rec.vector.astype("<f4", copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_embeddings(path) -> EmbeddingSet:
    """Read an EMB1 file; the result re-serializes byte-identically.

    Raises
    ------
    FormatError
        Bad magic or unsupported version.
    CorruptionError
        Truncated or internally inconsistent payload.
    ValidationError
        Well-formed payload violating set invariants (non-finite values,
        duplicate keys, empty model id).
    """
    reader = _Reader(Path(path).read_bytes(), str(path))
    _check_magic_version(reader, EMB_MAGIC)
    dim = reader.u32()
    count = reader.u64()
    if dim == 0:
        raise CorruptionError(f"{path}: declared dimension must be positive")
    model_id = reader.text()
    records = []
    for _ in range(count):
        subject_id = reader.text()
        sample_id = reader.text()
        vector = reader.f32_array(dim)
        records.append((subject_id, sample_id, vector))
    reader.expect_eof()
    return EmbeddingSet(model_id, dim, records)


def write_pairs(pairs: PairedEmbeddings, path) -> None:
    """Serialize paired embeddings to the EMB2 binary format (deterministic)."""
    parts = [
        PAIR_MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<I", pairs.dim_source),
        struct.pack("<I", pairs.dim_target),
        struct.pack("<Q", len(pairs)),
        _pack_text(pairs.source_model_id),
        _pack_text(pairs.target_model_id),
    ]
    src = pairs.source_matrix
    tgt = pairs.target_matrix
    for i, (subject_id, sample_id) in enumerate(pairs.keys):
        parts.append(_pack_text(subject_id))
        parts.append(_pack_text(sample_id))
        parts.append(src[i].astype("<f4", copy=False).tobytes())
        parts.append(tgt[i].astype("<f4", copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_pairs(path) -> PairedEmbeddings:
    """Read an EMB2 file written by :func:`write_pairs`."""
    reader = _Reader(Path(path).read_bytes(), str(path))
    _check_magic_version(reader, PAIR_MAGIC)
    dim_source = reader.u32()
    dim_target = reader.u32()
    count = reader.u64()
    if dim_source == 0 or dim_target == 0:
        raise CorruptionError(f"{path}: declared dimensions must be positive")
    source_model_id = reader.text()
    target_model_id = reader.text()
    # Each pair needs at least two empty strings plus both vectors; reject an
    # impossible declared count before allocating.
    min_record = 8 + 4 * (dim_source + dim_target)
    if count * min_record > len(reader.data) - reader.pos:
        raise CorruptionError(
            f"{path}: declared pair count {count} exceeds file size"
        )
    keys: list[Key] = []
    src = np.empty((count, dim_source), dtype=np.float32)
    tgt = np.empty((count, dim_target), dtype=np.float32)
    for i in range(count):
        subject_id = reader.text()
        sample_id = reader.text()
        src[i] = reader.f32_array(dim_source)
        tgt[i] = reader.f32_array(dim_target)
        keys.append((subject_id, sample_id))
    reader.expect_eof()
    return PairedEmbeddings(source_model_id, target_model_id, keys, src, tgt)


def _format_component(value: np.float32) -> str:
    return np.format_float_positional(value, unique=True, trim="0")


def export_csv(embeddings: EmbeddingSet, path) -> None:
    """Write the interop CSV (header subject_id,sample_id,e0..e{D-1}).

    The CSV drops model_id; the binary format is canonical. Components are
    written with shortest-unique decimal form, so import_csv round-trips
    float32 values exactly.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject_id", "sample_id"] + [f"e{i}" for i in range(embeddings.dim)]
        )
        for rec in embeddings.records:
            writer.writerow(
                [rec.subject_id, rec.sample_id]
                + [_format_component(v) for v in rec.vector]
            )


def import_csv(path, model_id: str) -> EmbeddingSet:
    """Read the interop CSV into a set attributed to ``model_id``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        if header[:2] != ["subject_id", "sample_id"]:
            raise FormatError(
                f"{path}: expected header starting with subject_id,sample_id"
            )
        dim = len(header) - 2
        if dim <= 0 or header[2:] != [f"e{i}" for i in range(dim)]:
            raise FormatError(f"{path}: malformed component columns in header")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 2:
                raise CorruptionError(
                    f"{path}:{lineno}: expected {dim + 2} fields, got {len(row)}"
                )
            try:
                vector = np.array([float(v) for v in row[2:]], dtype=np.float32)
            except ValueError as exc:
                raise CorruptionError(f"{path}:{lineno}: non-numeric component") from exc
            records.append((row[0], row[1], vector))
    return EmbeddingSet(model_id, dim, records)
