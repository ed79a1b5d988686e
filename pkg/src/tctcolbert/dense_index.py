"""Flat inner-product index over pooled passage vectors.

On-disk layout (little-endian)::

    b"TCTI" | version u32 | N u64 | dim u32 | N x (len u32, utf-8 id) | N*dim f32

Search is an exact scan: vectors are stored as float32 and scored in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .encoder import EmbeddingTable, Projection, encode_pooled_batch

MAGIC = b"TCTI"
VERSION = 1
F32_BYTES = 4


@dataclass
class SearchResult:
    entries: list[tuple[str, float]]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.entries]


def top_k(doc_ids: Sequence[str], scores: np.ndarray, k: int) -> SearchResult:
    """Highest scores first, equal scores by ascending doc id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    if n == 0:
        return SearchResult([])
    if k < n:
        # keep every row tied with the k-th best so the tie-break sees all of them
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = np.arange(n)
    ids = np.asarray(doc_ids, dtype=object)[cand]
    order = sorted(range(len(cand)), key=lambda i: (-scores[cand[i]], ids[i]))[:k]
    return SearchResult([(str(ids[i]), float(scores[cand[i]])) for i in order])


class DenseIndex:
    def __init__(self, doc_ids: Sequence[str], vectors):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError("vectors must be a matrix")
        if len(doc_ids) != vectors.shape[0]:
            raise ValueError(f"{len(doc_ids)} ids for {vectors.shape[0]} vectors")
        seen = set()
        for d in doc_ids:
            if d in seen:
                raise ValueError(f"duplicate doc id {d!r}")
            seen.add(d)
        self.doc_ids = list(doc_ids)
        self.vectors = np.ascontiguousarray(vectors)
        self.vectors.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.doc_ids)

    def scores(self, query_vector) -> np.ndarray:
        q = np.asarray(query_vector, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query has dimension {q.size}, index has {self.dim}")
        return self.vectors.astype(np.float64) @ q

    def search(self, query_vector, k: int) -> SearchResult:
        return top_k(self.doc_ids, self.scores(query_vector), k)

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<IQI", VERSION, len(self), self.dim)]
        for d in self.doc_ids:
            raw = d.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
        parts.append(self.vectors.astype("<f4").tobytes(order="C"))
        return b"".join(parts)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "DenseIndex":
        if data[:4] != MAGIC:
            raise ValueError("not a dense index file")
        version, n, dim = struct.unpack_from("<IQI", data, 4)
        if version != VERSION:
            raise ValueError(f"unsupported index version {version}")
        off = 4 + struct.calcsize("<IQI")
        ids = []
        for _ in range(n):
            (length,) = struct.unpack_from("<I", data, off)
            off += 4
            ids.append(data[off:off + length].decode("utf-8"))
            off += length
        vecs = np.frombuffer(data, dtype="<f4", count=n * dim, offset=off).reshape(n, dim)
        return cls(ids, vecs.astype(np.float32))

    @classmethod
    def load(cls, path) -> "DenseIndex":
        return cls.from_bytes(Path(path).read_bytes())

    def metadata_bytes(self) -> int:
        """Header plus id table, i.e. everything but the vector payload."""
        return len(self.to_bytes()) - self.vectors.size * F32_BYTES


def build(corpus: Mapping[str, Sequence[int]], table: EmbeddingTable, proj: Projection) -> DenseIndex:
    """Encode every passage with the student encoder, in corpus order."""
    if not corpus:
        raise ValueError("corpus is empty")
    ids = list(corpus)
    return DenseIndex(ids, encode_pooled_batch([corpus[d] for d in ids], table, proj))


@dataclass
class StorageReport:
    """Pooled index size versus storing every passage token vector.

    ``token_vectors`` counts the projected rows before the punctuation filter
    (the full tokenized passage length); ``filtered_token_vectors`` after it.
    """

    num_passages: int
    dim: int
    pooled_vector_bytes: int
    pooled_metadata_bytes: int
    token_vectors: int
    filtered_token_vectors: int
    token_dim: int

    @property
    def pooled_total_bytes(self) -> int:
        return self.pooled_vector_bytes + self.pooled_metadata_bytes

    @property
    def token_vector_bytes(self) -> int:
        return self.token_vectors * self.token_dim * F32_BYTES

    @property
    def ratio(self) -> float:
        return self.token_vector_bytes / self.pooled_vector_bytes

    @property
    def mean_passage_length(self) -> float:
        return self.token_vectors / self.num_passages

    @property
    def mean_filtered_length(self) -> float:
        return self.filtered_token_vectors / self.num_passages

    def format(self) -> str:
        rows = [
            ("passages", self.num_passages),
            ("dim", self.dim),
            ("pooled_vector_bytes", self.pooled_vector_bytes),
            ("pooled_metadata_bytes", self.pooled_metadata_bytes),
            ("pooled_total_bytes", self.pooled_total_bytes),
            ("token_vectors", self.token_vectors),
            ("token_vector_bytes", self.token_vector_bytes),
            ("per_token_over_pooled", f"{self.ratio:.3f}"),
            ("mean_passage_length", f"{self.mean_passage_length:.3f}"),
            ("mean_filtered_length", f"{self.mean_filtered_length:.3f}"),
        ]
        return "".join(f"{k}\t{v}\n" for k, v in rows)


def storage_report(index: DenseIndex, corpus: Mapping[str, Sequence[int]],
                   table: EmbeddingTable, token_dim: int | None = None) -> StorageReport:
    """Size the pooled index against one vector per passage token.

    ``token_dim`` is the per-token width; it defaults to the pooled width.
    """
    punct = table.vocab.punctuation_ids
    total = sum(len(corpus[d]) for d in index.doc_ids)
    kept = sum(sum(1 for i in corpus[d] if int(i) not in punct) for d in index.doc_ids)
    return StorageReport(
        num_passages=len(index),
        dim=index.dim,
        pooled_vector_bytes=len(index) * index.dim * F32_BYTES,
        pooled_metadata_bytes=index.metadata_bytes(),
        token_vectors=total,
        filtered_token_vectors=kept,
        token_dim=index.dim if token_dim is None else token_dim,
    )
