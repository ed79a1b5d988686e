"""Relevance functions: late-interaction MaxSim and pooled dot product."""

from __future__ import annotations

import numpy as np

from .encoder import EncodedText


def _matrix(m, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty matrix, got shape {m.shape}")
    return m


def maxsim(query_tokens, doc_tokens) -> float:
    """Sum over query rows of the best dot product against any doc row."""
    q = _matrix(query_tokens, "query_tokens")
    d = _matrix(doc_tokens, "doc_tokens")
    if q.shape[1] != d.shape[1]:
        raise ValueError(f"dimension mismatch: query width {q.shape[1]}, doc width {d.shape[1]}")
    return float((q @ d.T).max(axis=1).sum())


def maxsim_many(query_tokens, doc_token_list) -> np.ndarray:
    """MaxSim of one query against several documents with a single matmul."""
    q = _matrix(query_tokens, "query_tokens")
    if not doc_token_list:
        return np.zeros(0)
    lengths = np.array([len(d) for d in doc_token_list])
    if np.any(lengths == 0):
        raise ValueError("document token matrices must be non-empty")
    docs = np.concatenate(doc_token_list, axis=0)
    if docs.shape[1] != q.shape[1]:
        raise ValueError(f"dimension mismatch: query width {q.shape[1]}, doc width {docs.shape[1]}")
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    sims = q @ docs.T
    return np.maximum.reduceat(sims, starts, axis=1).sum(axis=0)


def pool_dot(query: EncodedText, doc: EncodedText) -> float:
    if query.pooled is None or doc.pooled is None:
        raise ValueError("pool_dot needs pooled encodings for both sides")
    q = np.asarray(query.pooled, dtype=np.float64)
    d = np.asarray(doc.pooled, dtype=np.float64)
    if q.shape != d.shape:
        raise ValueError(f"dimension mismatch: {q.size} vs {d.size}")
    return float(q @ d)
