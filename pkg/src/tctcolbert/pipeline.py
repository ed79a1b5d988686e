"""End-to-end helpers from raw text to retrieval runs, plus the
distillation-strategy ablation."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .dense_index import DenseIndex, build, top_k
from .distill import DistillConfig, TrainingTriplet, distill_student, train_teacher
from .encoder import (
    DEFAULT_T, PASSAGE_MAX_LEN, QUERY_MAX_LEN, EmbeddingTable, Projection,
    Vocabulary, encode_pooled_batch, encode_teacher_doc, encode_teacher_query, tokenize,
)
from .evaluation import mrr_at_k
from .fusion import fuse_query
from .scoring import maxsim_many
from .sparse_index import SparseIndex, analyze
from .trec import Qrels, Run


def make_table(texts: Iterable[str], t: int = DEFAULT_T, seed: int = 0) -> EmbeddingTable:
    return EmbeddingTable.random(Vocabulary.from_texts(texts), t=t, seed=seed)


def tokenize_all(texts: Mapping[str, str], vocab: Vocabulary, max_len: int) -> dict[str, np.ndarray]:
    return {k: tokenize(v, vocab, max_len) for k, v in texts.items()}


def make_triplets(triples: Iterable[tuple[str, str, str]], vocab: Vocabulary,
                  query_max_len: int = QUERY_MAX_LEN,
                  passage_max_len: int = PASSAGE_MAX_LEN) -> list[TrainingTriplet]:
    return [
        TrainingTriplet(tokenize(q, vocab, query_max_len),
                        tokenize(p, vocab, passage_max_len),
                        tokenize(n, vocab, passage_max_len))
        for q, p, n in triples
    ]


def dense_run(index: DenseIndex, queries: Mapping[str, np.ndarray], table: EmbeddingTable,
              proj: Projection, k: int = 1000) -> Run:
    if not queries:
        return {}
    qids = list(queries)
    vecs = encode_pooled_batch([queries[q] for q in qids], table, proj)
    return {q: index.search(v, k).entries for q, v in zip(qids, vecs)}


def teacher_run(queries: Mapping[str, np.ndarray], corpus: Mapping[str, np.ndarray],
                table: EmbeddingTable, proj: Projection, k: int = 1000) -> Run:
    """Exhaustive MaxSim ranking of the whole corpus (small collections only)."""
    doc_ids = list(corpus)
    docs = [encode_teacher_doc(corpus[d], table, proj).token_vectors for d in doc_ids]
    run = {}
    for qid, ids in queries.items():
        q = encode_teacher_query(ids, table, proj).token_vectors
        run[qid] = top_k(doc_ids, maxsim_many(q, docs), k).entries
    return run


def sparse_run(index: SparseIndex, queries: Mapping[str, str], k: int = 1000) -> Run:
    return {qid: index.search(analyze(text), k).entries for qid, text in queries.items()}


@dataclass
class StageTiming:
    encode_ms: float
    search_ms: float
    combine_ms: float
    queries: int

    def format(self) -> str:
        return (
            f"stage\tms/query\n"
            f"query_encoder\t{self.encode_ms:.3f}\n"
            f"dot_product_search\t{self.search_ms:.3f}\n"
            f"score_combination\t{self.combine_ms:.3f}\n"
        )


def bench(index: DenseIndex, queries: Mapping[str, np.ndarray], table: EmbeddingTable,
          proj: Projection, sparse: Run | None = None, alpha: float = 0.1, k: int = 1000) -> StageTiming:
    """Mean per-query latency of encoding, dense search and score fusion."""
    enc = srch = comb = 0.0
    for qid, ids in queries.items():
        t0 = time.perf_counter()
        vec = encode_pooled_batch([ids], table, proj)[0]
        t1 = time.perf_counter()
        hits = index.search(vec, k).entries
        t2 = time.perf_counter()
        if sparse is not None and sparse.get(qid):
            fuse_query(sparse[qid], hits, alpha, k)
        t3 = time.perf_counter()
        enc += t1 - t0
        srch += t2 - t1
        comb += t3 - t2
    n = max(len(queries), 1)
    return StageTiming(1e3 * enc / n, 1e3 * srch / n, 1e3 * comb / n, len(queries))


# ---------------------------------------------------------------- ablation


ABLATION_MODES = ("none", "triplet", "in_batch")

# Desk-scale step sizes. Random 64-d embeddings give tiny raw scores and the
# loss is averaged over the batch, so the library default of 0.05 barely moves.
TEACHER_LR = 1.0
STUDENT_LR = 8.0


def ablation_config(base: DistillConfig, mode: str) -> DistillConfig:
    """Config for one distillation condition.

    The no-distillation condition trains on the hard labels alone (gamma = 1),
    i.e. the plain pooled bi-encoder.
    """
    if mode == "none":
        return replace(base, mode="none", gamma=1.0)
    return replace(base, mode=mode)


@dataclass
class Prepared:
    table: EmbeddingTable
    corpus_ids: dict[str, np.ndarray]
    query_ids: dict[str, np.ndarray]
    qrels: Qrels
    triplets: list[TrainingTriplet]


def prepare(dataset, t: int = DEFAULT_T, seed: int = 0) -> Prepared:
    """Vocabulary, frozen table and token ids for a :class:`SynthDataset`."""
    texts = list(dataset.corpus.values()) + list(dataset.train_queries.values()) + list(dataset.queries.values())
    table = make_table(texts, t=t, seed=seed)
    return Prepared(
        table=table,
        corpus_ids=tokenize_all(dataset.corpus, table.vocab, PASSAGE_MAX_LEN),
        query_ids=tokenize_all(dataset.queries, table.vocab, QUERY_MAX_LEN),
        qrels=dataset.qrels,
        triplets=make_triplets(dataset.triples, table.vocab),
    )


def student_mrr(prep: Prepared, proj: Projection, k: int = 10) -> float:
    index = build(prep.corpus_ids, prep.table, proj)
    return mrr_at_k(dense_run(index, prep.query_ids, prep.table, proj, k), prep.qrels, k)


def teacher_mrr(prep: Prepared, proj: Projection, k: int = 10) -> float:
    return mrr_at_k(teacher_run(prep.query_ids, prep.corpus_ids, prep.table, proj, k), prep.qrels, k)


@dataclass
class AblationResult:
    teacher_mrr: float
    student_mrr: dict[str, float]
    seconds: dict[str, float]

    def ordering_holds(self) -> bool:
        m = self.student_mrr
        return m["none"] < m["in_batch"] and m["triplet"] >= m["none"]


def run_ablation(dataset, seed: int = 0, steps: int = 2000, batch_size: int = 8,
                 t: int = DEFAULT_T, h: int = 32) -> AblationResult:
    """Train one teacher, then one student per distillation condition."""
    prep = prepare(dataset, t=t, seed=seed)
    init = Projection.random(t, h, seed=seed + 1)
    base = DistillConfig(steps=steps, batch_size=batch_size, seed=seed)
    t0 = time.perf_counter()
    teacher = train_teacher(prep.triplets, prep.table, replace(base, learning_rate=TEACHER_LR), init)
    seconds = {"teacher": time.perf_counter() - t0}
    mrr = {}
    for mode in ABLATION_MODES:
        t0 = time.perf_counter()
        student, _ = distill_student(prep.triplets, prep.table, teacher,
                                     ablation_config(replace(base, learning_rate=STUDENT_LR), mode))
        seconds[mode] = time.perf_counter() - t0
        mrr[mode] = student_mrr(prep, student)
    return AblationResult(teacher_mrr(prep, teacher), mrr, seconds)
