"""Bit-exact binary embedding container and the embedding-provider client.

File layout (little-endian throughout)::

    magic    4 bytes  b"DVSE"
    version  u16      1 for plain modalities, 2 for fused vectors
    modality u8       0=text 1=audio 2=image 3=fused(v2 only)
    dim      u32      vector length, >= 1
    count    u64      record count
    records  count *  [id_len u16][id UTF-8 bytes][dim * float32]

Records are streamed in order; float32 bit patterns are preserved exactly,
subnormals included. Files are written atomically (temp file + rename) and a
reader error is guaranteed for any size/declaration inconsistency, trailing
bytes included.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import requests

MAGIC = b"DVSE"
HEADER = struct.Struct("<4sHBIQ")  # magic, version, modality, dim, count
HEADER_SIZE = HEADER.size  # 19 bytes

NORM_EPSILON = 1e-12


class Modality(IntEnum):
    TEXT = 0
    AUDIO = 1
    IMAGE = 2
    FUSED = 3  # only valid under format version 2

    @property
    def wire_name(self) -> str:
        return self.name.lower()


#: Modalities a given format version may carry.
_VERSION_MODALITIES = {
    1: (Modality.TEXT, Modality.AUDIO, Modality.IMAGE),
    2: (Modality.FUSED,),
}


def format_version_for(modality: Modality) -> int:
    return 2 if modality == Modality.FUSED else 1


class EmbeddingError(ValueError):
    """Invalid embedding set construction."""


class EmbeddingFormatError(EmbeddingError):
    """Corrupt or inconsistent embedding file."""


class ProviderError(RuntimeError):
    """Embedding provider unreachable or protocol violation in its response."""


@dataclass(frozen=True)
class FrameRef:
    """Reference to one sampled frame of a clip; id format is fixed."""

    clip_id: str
    frame_index: int

    def __post_init__(self):
        if self.frame_index < 0:
            raise EmbeddingError("frame_index must be non-negative")

    @property
    def id(self) -> str:
        return f"{self.clip_id}#frame{self.frame_index}"

    @classmethod
    def parse(cls, frame_id: str) -> "FrameRef":
        clip_id, sep, index = frame_id.rpartition("#frame")
        if not sep or not index.isdigit():
            raise EmbeddingError(f"not a frame id: {frame_id!r}")
        return cls(clip_id=clip_id, frame_index=int(index))


class EmbeddingSet:
    """Immutable, dimension-tagged collection of float32 vectors with ids."""

    __slots__ = ("modality", "dim", "ids", "vectors", "_index")

    def __init__(self, modality: Modality, dim: int, ids: Sequence[str], vectors):
        if dim < 1:
            raise EmbeddingError("dim must be >= 1")
        modality = Modality(modality)
        ids = tuple(ids)
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise EmbeddingError(f"duplicate ids: {dupes[:5]}")
        arr = np.asarray(vectors, dtype=np.float32)
        if arr.shape != (len(ids), dim):
            raise EmbeddingError(
                f"vectors have shape {arr.shape}, expected {(len(ids), dim)}"
            )
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "modality", modality)
        object.__setattr__(self, "dim", int(dim))
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", arr)
        object.__setattr__(self, "_index", {i: k for k, i in enumerate(ids)})

    def __setattr__(self, name, value):
        raise AttributeError("EmbeddingSet is immutable")

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._index

    def vector(self, record_id: str) -> np.ndarray:
        return self.vectors[self._index[record_id]]

    def records(self) -> Iterator[tuple[str, np.ndarray]]:
        return zip(self.ids, self.vectors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self.modality == other.modality
            and self.dim == other.dim
            and self.ids == other.ids
            and self.vectors.tobytes() == other.vectors.tobytes()
        )


def write_embeddings(es: EmbeddingSet, path) -> int:
    """Serialize to the binary container; returns bytes written."""
    path = Path(path)
    version = format_version_for(es.modality)
    chunks = [HEADER.pack(MAGIC, version, int(es.modality), es.dim, len(es))]
    for record_id, vec in es.records():
        raw_id = record_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise EmbeddingError(f"id too long ({len(raw_id)} bytes): {record_id[:40]!r}...")
        chunks.append(struct.pack("<H", len(raw_id)))
        chunks.append(raw_id)
        chunks.append(vec.astype("<f4", copy=False).tobytes())
    payload = b"".join(chunks)

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


def read_embeddings(path) -> EmbeddingSet:
    """Parse a container file; bit-exact inverse of write_embeddings."""
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        raise EmbeddingFormatError(f"{path}: file shorter than header ({len(data)} bytes)")
    magic, version, modality_raw, dim, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
    if version not in _VERSION_MODALITIES:
        raise EmbeddingFormatError(f"{path}: unsupported format version {version}")
    try:
        modality = Modality(modality_raw)
    except ValueError:
        raise EmbeddingFormatError(f"{path}: unknown modality byte {modality_raw}") from None
    if modality not in _VERSION_MODALITIES[version]:
        raise EmbeddingFormatError(
            f"{path}: modality {modality.wire_name} not valid under version {version}"
        )
    if dim < 1:
        raise EmbeddingFormatError(f"{path}: dim must be >= 1, got {dim}")

    offset = HEADER_SIZE
    vec_bytes = 4 * dim
    ids = []
    rows = []
    for k in range(count):
        if offset + 2 > len(data):
            raise EmbeddingFormatError(
                f"{path}: truncated at record {k}/{count} (declared count too large?)"
            )
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len + vec_bytes > len(data):
            raise EmbeddingFormatError(f"{path}: truncated at record {k}/{count}")
        try:
            record_id = data[offset : offset + id_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EmbeddingFormatError(f"{path}: record {k} id is not UTF-8: {exc}") from exc
        offset += id_len
        rows.append(np.frombuffer(data, dtype="<f4", count=dim, offset=offset))
        offset += vec_bytes
        ids.append(record_id)
    if offset != len(data):
        raise EmbeddingFormatError(
            f"{path}: {len(data) - offset} trailing bytes after {count} records"
        )
    vectors = np.vstack(rows) if rows else np.empty((0, dim), dtype=np.float32)
    try:
        return EmbeddingSet(modality, dim, ids, vectors)
    except EmbeddingError as exc:
        raise EmbeddingFormatError(f"{path}: {exc}") from exc


def l2_normalize(es: EmbeddingSet) -> tuple[EmbeddingSet, list[str]]:
    """Scale every vector to unit L2 norm.

    Vectors with norm <= 1e-12 are left unchanged and reported in the warning
    list (cosine similarity against them is defined as 0 downstream).
    """
    norms = np.linalg.norm(es.vectors.astype(np.float64), axis=1)
    degenerate = norms <= NORM_EPSILON
    safe = np.where(degenerate, 1.0, norms)
    normalized = (es.vectors / safe[:, None].astype(np.float32)).astype(np.float32)
    normalized[degenerate] = es.vectors[degenerate]
    warnings = [f"zero-norm vector left unchanged: {es.ids[i]}" for i in np.nonzero(degenerate)[0]]
    return EmbeddingSet(es.modality, es.dim, es.ids, normalized), warnings


class EmbeddingProviderClient:
    """Client for the provider HTTP protocol.

    POST {provider}/v1/embed with ``{"modality": ..., "items": [...]}`` and
    expect ``{"dim": ..., "model": ..., "vectors": [{"id", "values"}, ...]}``.
    The first successful call pins the provider-declared dim per modality;
    later calls that disagree raise ProviderError.
    """

    def __init__(self, provider_url: str, timeout: float = 30.0, session=None):
        self.provider_url = provider_url.rstrip("/")
        self.timeout = timeout
        self._http = session or requests.Session()
        self._dims: dict[Modality, int] = {}

    def health(self) -> dict:
        try:
            resp = self._http.get(f"{self.provider_url}/v1/health", timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except requests.RequestException as exc:
            raise ProviderError(f"health check failed: {exc}") from exc

    def fetch(
        self,
        modality: Modality,
        items: Sequence[dict],
        batch_size: Optional[int] = None,
    ) -> EmbeddingSet:
        modality = Modality(modality)
        if not items:
            raise ProviderError("no items to fetch")
        requested = [item["id"] for item in items]
        if len(set(requested)) != len(requested):
            raise ProviderError("duplicate item ids in request")

        batches = [items] if not batch_size else [
            items[i : i + batch_size] for i in range(0, len(items), batch_size)
        ]
        ids: list[str] = []
        rows: list[np.ndarray] = []
        for batch in batches:
            dim, vectors = self._fetch_batch(modality, batch)
            pinned = self._dims.setdefault(modality, dim)
            if dim != pinned:
                raise ProviderError(
                    f"provider changed {modality.wire_name} dim from {pinned} to {dim} "
                    "within one session"
                )
            for item in batch:
                ids.append(item["id"])
                rows.append(vectors[item["id"]])
        return EmbeddingSet(modality, self._dims[modality], ids, np.vstack(rows))

    def _fetch_batch(self, modality: Modality, batch: Sequence[dict]):
        body = {"modality": modality.wire_name, "items": list(batch)}
        try:
            resp = self._http.post(
                f"{self.provider_url}/v1/embed", json=body, timeout=self.timeout
            )
            resp.raise_for_status()
            doc = resp.json()
        except (requests.RequestException, json.JSONDecodeError) as exc:
            raise ProviderError(f"embed request failed: {exc}") from exc

        for key in ("dim", "model", "vectors"):
            if key not in doc:
                raise ProviderError(f"provider response missing {key!r}")
        dim = int(doc["dim"])
        by_id = {}
        for entry in doc["vectors"]:
            if not isinstance(entry, dict) or "id" not in entry or "values" not in entry:
                raise ProviderError(f"malformed vector entry: {entry!r}")
            if entry["id"] in by_id:
                raise ProviderError(f"provider returned id {entry['id']!r} twice")
            values = np.asarray(entry["values"], dtype=np.float32)
            if values.shape != (dim,):
                raise ProviderError(
                    f"vector for {entry['id']!r} has length {values.size}, declared dim {dim}"
                )
            by_id[entry["id"]] = values
        missing = [item["id"] for item in batch if item["id"] not in by_id]
        if missing:
            raise ProviderError(f"provider response missing ids: {missing[:5]}")
        extra = set(by_id) - {item["id"] for item in batch}
        if extra:
            raise ProviderError(f"provider returned unrequested ids: {sorted(extra)[:5]}")
        return dim, by_id


def fetch_embeddings(
    provider_url: str,
    modality: Modality,
    items: Sequence[dict],
    batch_size: Optional[int] = None,
    timeout: float = 30.0,
) -> EmbeddingSet:
    """One-shot fetch; see EmbeddingProviderClient for session semantics."""
    client = EmbeddingProviderClient(provider_url, timeout=timeout)
    return client.fetch(modality, items, batch_size=batch_size)
