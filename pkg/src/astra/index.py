"""Exact maximum-inner-product search over unit-norm prompt embeddings.

The index is a contiguous float32 matrix plus a parallel metadata table;
search is an exact full scan (no approximation). At the target scale of a
few thousand entries a scan is sub-millisecond, and exactness makes the
top-1 literally the argmax of the query/entry inner products.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import IndexFormatError, ValidationError

EMBED_DIM = 384
NORM_TOL = 1e-4

_MAGIC = b"ASTRAIDX"
_FORMAT_VERSION = 1


def l2_normalize(v, *, dim: int | None = EMBED_DIM) -> np.ndarray:
    """Scale a vector to unit Euclidean norm (float64 output)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"expected a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValidationError(f"expected dimension {dim}, got {arr.shape[0]}")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValidationError("cannot normalize a zero vector")
    return arr / norm


def mean_pool(token_matrix) -> np.ndarray:
    """Componentwise mean over the rows of a T x d token-embedding matrix."""
    m = np.asarray(token_matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValidationError(f"expected a T x d matrix with T >= 1, got shape {m.shape}")
    return m.mean(axis=0)


@dataclass(frozen=True)
class IndexEntry:
    id: int
    prompt: str
    vector: np.ndarray
    pose_ref: str


@dataclass(frozen=True)
class SearchHit:
    id: int
    score: float
    rank: int


class FlatIndex:
    """Immutable exact-search index; build once, search concurrently."""

    def __init__(
        self,
        matrix: np.ndarray,
        ids: np.ndarray,
        prompts: Sequence[str],
        pose_refs: Sequence[str],
    ) -> None:
        if matrix.ndim != 2:
            raise ValidationError("vector storage must be a 2-D matrix")
        if not (matrix.shape[0] == len(ids) == len(prompts) == len(pose_refs)):
            raise ValidationError("vector storage and metadata table sizes differ")
        self._matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        self._ids = np.asarray(ids, dtype=np.int64)
        self._prompts = list(prompts)
        self._pose_refs = list(pose_refs)
        self._row_by_id = {int(i): r for r, i in enumerate(self._ids)}
        if len(self._row_by_id) != len(self._ids):
            raise ValidationError("entry ids must be unique")

    def __len__(self) -> int:
        return self._matrix.shape[0]

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    @property
    def vector_matrix(self) -> np.ndarray:
        view = self._matrix.view()
        view.setflags(write=False)
        return view

    def entry(self, entry_id: int) -> IndexEntry:
        try:
            row = self._row_by_id[int(entry_id)]
        except KeyError:
            raise KeyError(f"no entry with id {entry_id}") from None
        return IndexEntry(
            id=int(self._ids[row]),
            prompt=self._prompts[row],
            vector=self._matrix[row].copy(),
            pose_ref=self._pose_refs[row],
        )

    def entries(self) -> Iterator[IndexEntry]:
        for entry_id in self._ids:
            yield self.entry(int(entry_id))

    def search(self, query, k: int) -> list[SearchHit]:
        """Exact top-k by inner product, descending score, ties by ascending id."""
        if not isinstance(k, int) or k < 1:
            raise ValidationError(f"k must be a positive integer, got {k!r}")
        q = np.asarray(query, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != self.dim:
            raise ValidationError(
                f"query dimension {q.shape} does not match index dimension {self.dim}"
            )
        if len(self) == 0:
            return []
        # unit vectors bound the true product to [-1, 1]; clip f32 rounding excess
        scores = np.clip(self._matrix @ q, -1.0, 1.0)
        order = np.lexsort((self._ids, -scores))[:k]
        return [
            SearchHit(id=int(self._ids[row]), score=float(scores[row]), rank=rank + 1)
            for rank, row in enumerate(order)
        ]

    def save(self, path) -> None:
        meta = json.dumps(
            {
                "ids": [int(i) for i in self._ids],
                "prompts": self._prompts,
                "pose_refs": self._pose_refs,
            }
        ).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _FORMAT_VERSION))
            fh.write(struct.pack("<I", self.dim))
            fh.write(struct.pack("<Q", len(self)))
            fh.write(self._matrix.astype("<f4", copy=False).tobytes())
            fh.write(struct.pack("<Q", len(meta)))
            fh.write(meta)

    @classmethod
    def load(cls, path) -> "FlatIndex":
        with open(path, "rb") as fh:
            data = fh.read()
        header = struct.calcsize("<8sIIQ")
        if len(data) < header:
            raise IndexFormatError("file too short for index header")
        magic, version, dim, count = struct.unpack_from("<8sIIQ", data, 0)
        if magic != _MAGIC:
            raise IndexFormatError(f"bad magic bytes {magic!r}")
        if version != _FORMAT_VERSION:
            raise IndexFormatError(f"unsupported format version {version}")
        vec_bytes = count * dim * 4
        if len(data) < header + vec_bytes + 8:
            raise IndexFormatError(
                f"truncated vector block: need {vec_bytes} bytes, file has {len(data) - header}"
            )
        matrix = (
            np.frombuffer(data, dtype="<f4", count=count * dim, offset=header)
            .reshape(count, dim)
            .copy()
        )
        (meta_len,) = struct.unpack_from("<Q", data, header + vec_bytes)
        meta_start = header + vec_bytes + 8
        if len(data) < meta_start + meta_len:
            raise IndexFormatError("truncated metadata block")
        try:
            meta = json.loads(data[meta_start : meta_start + meta_len].decode("utf-8"))
            ids, prompts, pose_refs = meta["ids"], meta["prompts"], meta["pose_refs"]
        except (ValueError, KeyError) as exc:
            raise IndexFormatError(f"corrupt metadata block: {exc!r}") from None
        if not (len(ids) == len(prompts) == len(pose_refs) == count):
            raise IndexFormatError("metadata table size disagrees with header count")
        return cls(matrix, np.asarray(ids, dtype=np.int64), prompts, pose_refs)


def build_index(entries: Sequence[IndexEntry]) -> FlatIndex:
    """Build a searchable index over the given entries.

    All vectors must share one dimension and be unit-norm; ids must be unique.
    An empty entry list yields a valid empty index.
    """
    if not entries:
        return FlatIndex(np.zeros((0, EMBED_DIM), dtype=np.float32), np.zeros(0, dtype=np.int64), [], [])
    dim = np.asarray(entries[0].vector).shape[-1]
    vectors = []
    seen: set[int] = set()
    for e in entries:
        vec = np.asarray(e.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] != dim:
            raise ValidationError(f"entry {e.id}: vector shape {vec.shape} != ({dim},)")
        if abs(float(np.linalg.norm(vec)) - 1.0) > NORM_TOL:
            raise ValidationError(f"entry {e.id}: vector is not unit-norm")
        if e.id in seen:
            raise ValidationError(f"duplicate entry id {e.id}")
        seen.add(e.id)
        vectors.append(vec)
    matrix = np.asarray(vectors, dtype=np.float32)
    ids = np.array([e.id for e in entries], dtype=np.int64)
    return FlatIndex(matrix, ids, [e.prompt for e in entries], [e.pose_ref for e in entries])


def read_ingest_jsonl(path) -> list[dict]:
    """Read bulk-ingest records: one JSON object per line."""
    records: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: line {n} is not valid JSON: {exc}") from None
            if not isinstance(rec, dict):
                raise ValidationError(f"{path}: line {n} is not a JSON object")
            records.append(rec)
    return records


def entries_from_records(records: Sequence[dict], embedder=None) -> list[IndexEntry]:
    """Turn ingest records {id, prompt, pose_ref, vector?} into index entries.

    Records without a vector are embedded via ``embedder`` (token-matrix
    outputs are mean-pooled); every vector is re-normalized defensively.
    """
    entries: list[IndexEntry] = []
    for n, rec in enumerate(records):
        try:
            entry_id = int(rec["id"])
            prompt = str(rec["prompt"])
            pose_ref = str(rec["pose_ref"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"record #{n} is malformed: {exc!r}") from None
        if rec.get("vector") is not None:
            raw = np.asarray(rec["vector"], dtype=np.float64)
        else:
            if embedder is None:
                raise ValidationError(
                    f"record #{n} (id={entry_id}) has no vector and no embedder was provided"
                )
            raw = np.asarray(embedder.embed(prompt), dtype=np.float64)
        if raw.ndim == 2:
            raw = mean_pool(raw)
        entries.append(IndexEntry(entry_id, prompt, l2_normalize(raw, dim=None), pose_ref))
    return entries
