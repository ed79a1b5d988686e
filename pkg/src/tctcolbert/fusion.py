"""Dense-sparse score fusion with per-query minimum-score substitution.

A passage found by only one retriever borrows the lowest score the other
retriever returned for that query; passages found by both get the plain
linear combination ``alpha * sparse + dense``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .dense_index import top_k
from .evaluation import mrr_at_k
from .trec import Qrels, Run

FUSED_TAG = "tct-fused"
ALPHA_GRID = tuple(round(0.02 * i, 2) for i in range(51))


def fuse_query(sparse: Sequence[tuple[str, float]], dense: Sequence[tuple[str, float]],
               alpha: float, k: int | None = None) -> list[tuple[str, float]]:
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if not sparse or not dense:
        raise ValueError("both runs need at least one result for the query")
    sp = dict(sparse)
    ds = dict(dense)
    sp_min = min(sp.values())
    ds_min = min(ds.values())
    ids = list(dict.fromkeys([d for d, _ in dense] + [d for d, _ in sparse]))
    scores = np.array([
        alpha * sp.get(d, sp_min) + ds.get(d, ds_min)
        for d in ids
    ])
    return top_k(ids, scores, len(ids) if k is None else k).entries


def fuse(sparse_run: Run, dense_run: Run, alpha: float, k: int | None = 1000) -> Run:
    """Fuse every query present in both runs."""
    missing = set(sparse_run) ^ set(dense_run)
    if missing:
        raise ValueError(f"queries present in only one run: {sorted(missing)[:5]}")
    return {qid: fuse_query(sparse_run[qid], dense_run[qid], alpha, k) for qid in dense_run}


def tune_alpha(sparse_run: Run, dense_run: Run, qrels: Qrels,
               alphas: Sequence[float] = ALPHA_GRID,
               metric: Callable[[Run, Qrels], float] = mrr_at_k,
               k: int | None = 1000) -> float:
    """Grid search; returns the alpha with the best mean metric, smallest on ties."""
    if not alphas:
        raise ValueError("need at least one candidate alpha")
    labeled = [q for q in dense_run if q in qrels]
    if not labeled:
        raise ValueError("no labeled queries to tune on")
    sp = {q: sparse_run[q] for q in labeled}
    ds = {q: dense_run[q] for q in labeled}
    best_alpha, best_value = None, -np.inf
    for alpha in sorted(alphas):
        value = metric(fuse(sp, ds, alpha, k), qrels)
        if value > best_value:
            best_alpha, best_value = alpha, value
    return best_alpha
