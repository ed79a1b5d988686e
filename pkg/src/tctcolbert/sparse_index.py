"""Okapi BM25 inverted index used for first-stage retrieval, negative sampling
and the sparse side of hybrid fusion."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dense_index import SearchResult, top_k
from .encoder import is_punctuation, split_tokens

K1 = 0.9
B = 0.4
NEGATIVE_POOL_DEPTH = 100


def analyze(text: str) -> list[str]:
    """Encoder tokenization with punctuation marks dropped."""
    return [t for t in split_tokens(text) if not is_punctuation(t)]


@dataclass
class SparseIndex:
    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    k1: float = K1
    b: float = B
    doc_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.doc_ids:
            self.doc_ids = sorted(self.doc_lengths)
        self._pos = {d: i for i, d in enumerate(self.doc_ids)}
        self._lengths = np.array([self.doc_lengths[d] for d in self.doc_ids], dtype=np.float64)

    @property
    def num_docs(self) -> int:
        return len(self.doc_lengths)

    @property
    def avg_doc_length(self) -> float:
        return float(self._lengths.mean())

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        n, df = self.num_docs, self.df(term)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def score_all(self, query_terms: Iterable[str]) -> np.ndarray:
        """BM25 score of every document (in ``doc_ids`` order)."""
        scores = np.zeros(len(self.doc_ids))
        norm = self.k1 * (1.0 - self.b + self.b * self._lengths / self.avg_doc_length)
        # a repeated query term counts once per occurrence
        for term in query_terms:
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            rows = np.fromiter((self._pos[d] for d, _ in plist), dtype=np.int64, count=len(plist))
            tf = np.fromiter((c for _, c in plist), dtype=np.float64, count=len(plist))
            scores[rows] += idf * tf / (tf + norm[rows])
        return scores

    def search(self, query_terms: Sequence[str], k: int) -> SearchResult:
        if k < 1:
            raise ValueError("k must be >= 1")
        query_terms = list(query_terms)
        matched = [t for t in query_terms if t in self.postings]
        if not matched:
            return SearchResult([])
        scores = self.score_all(query_terms)
        hit = np.zeros(len(self.doc_ids), dtype=bool)
        for term in matched:
            hit[[self._pos[d] for d, _ in self.postings[term]]] = True
        rows = np.flatnonzero(hit)
        return top_k([self.doc_ids[i] for i in rows], scores[rows], k)

    def to_json(self) -> str:
        payload = {
            "k1": self.k1,
            "b": self.b,
            "doc_ids": self.doc_ids,
            "doc_lengths": [self.doc_lengths[d] for d in self.doc_ids],
            "postings": {t: [[d, c] for d, c in p] for t, p in sorted(self.postings.items())},
        }
        return json.dumps(payload, separators=(",", ":"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SparseIndex":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        ids = payload["doc_ids"]
        return cls(
            postings={t: [(d, int(c)) for d, c in p] for t, p in payload["postings"].items()},
            doc_lengths=dict(zip(ids, payload["doc_lengths"])),
            k1=payload["k1"],
            b=payload["b"],
            doc_ids=ids,
        )


def build_sparse(corpus: Mapping[str, Sequence[str]], k1: float = K1, b: float = B) -> SparseIndex:
    """Index pre-analyzed documents (doc id -> terms)."""
    if not corpus:
        raise ValueError("corpus is empty")
    ids = list(corpus)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate doc id in corpus")
    postings: dict[str, list[tuple[str, int]]] = {}
    lengths = {}
    for docid in sorted(ids):
        terms = list(corpus[docid])
        lengths[docid] = len(terms)
        for term, count in sorted(Counter(terms).items()):
            postings.setdefault(term, []).append((docid, count))
    if sum(lengths.values()) == 0:
        raise ValueError("corpus contains no indexable terms")
    return SparseIndex(postings, lengths, k1=k1, b=b)


def build_sparse_from_text(corpus: Mapping[str, str], k1: float = K1, b: float = B) -> SparseIndex:
    return build_sparse({d: analyze(text) for d, text in corpus.items()}, k1=k1, b=b)


def bm25_search(index: SparseIndex, query_terms: Sequence[str], k: int) -> SearchResult:
    return index.search(query_terms, k)


def sample_bm25_negative(index: SparseIndex, query_terms: Sequence[str], positives,
                         rng: np.random.Generator, depth: int = NEGATIVE_POOL_DEPTH) -> str:
    """Uniform draw from the top-``depth`` BM25 hits that are not positives."""
    positives = set(positives)
    pool = [d for d in index.search(query_terms, depth).doc_ids if d not in positives]
    if not pool:
        raise ValueError("no BM25 candidate outside the positive set")
    return pool[int(rng.integers(len(pool)))]
