"""Ranking metrics with trec_eval-style exclusion rules."""

from __future__ import annotations

import logging
import math

from .trec import Qrels, Run

log = logging.getLogger(__name__)


def _judged_queries(run: Run, qrels: Qrels):
    missing = [qid for qid in run if qid not in qrels]
    if missing:
        log.warning("%d run queries have no qrels and are excluded", len(missing))
    for qid, ranked in run.items():
        if qid in qrels:
            yield qid, ranked, qrels[qid]


def mrr_at_k(run: Run, qrels: Qrels, k: int = 10) -> float:
    rr = []
    for _, ranked, judged in _judged_queries(run, qrels):
        score = 0.0
        for rank, (docid, _) in enumerate(ranked[:k], 1):
            if judged.get(docid, 0) >= 1:
                score = 1.0 / rank
                break
        rr.append(score)
    return sum(rr) / len(rr) if rr else 0.0


def recall_at_k(run: Run, qrels: Qrels, k: int = 1000) -> float:
    values = []
    skipped = 0
    for _, ranked, judged in _judged_queries(run, qrels):
        relevant = {d for d, g in judged.items() if g >= 1}
        if not relevant:
            skipped += 1
            continue
        hits = relevant.intersection(d for d, _ in ranked[:k])
        values.append(len(hits) / len(relevant))
    if skipped:
        log.warning("%d queries without relevant documents excluded from recall", skipped)
    return sum(values) / len(values) if values else 0.0


def _dcg(grades) -> float:
    return sum((2.0 ** g - 1.0) / math.log2(rank + 1) for rank, g in enumerate(grades, 1))


def ndcg_at_k(run: Run, qrels: Qrels, k: int = 10) -> float:
    """NDCG with gain 2^grade - 1 and log2(rank + 1) discount.

    Queries whose ideal DCG is zero are dropped from the mean.
    """
    values = []
    for _, ranked, judged in _judged_queries(run, qrels):
        ideal = _dcg(sorted(judged.values(), reverse=True)[:k])
        if ideal <= 0:
            continue
        values.append(_dcg(judged.get(d, 0) for d, _ in ranked[:k]) / ideal)
    return sum(values) / len(values) if values else 0.0


METRICS = {
    "mrr@10": lambda run, qrels: mrr_at_k(run, qrels, 10),
    "recall@1000": lambda run, qrels: recall_at_k(run, qrels, 1000),
    "ndcg@10": lambda run, qrels: ndcg_at_k(run, qrels, 10),
}


def evaluate(run: Run, qrels: Qrels, metrics=("mrr@10", "recall@1000", "ndcg@10")) -> dict[str, float]:
    return {name: METRICS[name](run, qrels) for name in metrics}


def format_report(results: dict[str, float]) -> str:
    width = max(len(name) for name in results)
    return "".join(f"{name:<{width}}\t{value:.4f}\n" for name, value in results.items())
