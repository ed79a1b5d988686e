"""Teacher fine-tuning and tightly-coupled distillation into the pooled student.

The frozen MaxSim teacher is run on every sampled batch. Its tempered
in-batch distribution is the soft target for the student's dot-product
distribution, mixed with a hard-label cross-entropy term::

    loss = gamma * CE + (1 - gamma) * KL(teacher || student)

Both terms are summed over queries and divided by the batch size.
Distillation modes:

* ``none``: no KL term (plain supervised bi-encoder)
* ``triplet``: KL over each query's own (positive, negative) pair
* ``in_batch``: KL over every passage in the batch

The cross-entropy term always contrasts a query's positive with its own
negative, so ``gamma = 1`` gives the same trajectory in every mode.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .encoder import EmbeddingTable, Projection, encode_teacher_doc, encode_teacher_query
from .linalg import log_softmax, softmax
from .scoring import maxsim_many

log = logging.getLogger(__name__)

MODES = ("none", "triplet", "in_batch")


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at step {step}")
        self.step = step


class DuplicatePassageWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class TrainingTriplet:
    query_ids: np.ndarray
    positive_ids: np.ndarray
    negative_ids: np.ndarray

    def __post_init__(self):
        for name in ("query_ids", "positive_ids", "negative_ids"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"{name} must be a non-empty id sequence")
            object.__setattr__(self, name, arr)
        if np.array_equal(self.positive_ids, self.negative_ids):
            raise ValueError("positive and negative passages are identical")


@dataclass
class DistillConfig:
    gamma: float = 0.1
    tau: float = 0.25
    mode: str = "in_batch"
    learning_rate: float = 0.05
    steps: int = 2000
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")


@dataclass
class Batch:
    """One scored batch: every query against every distinct passage in it.

    Passage means are the average frozen embeddings, so the student score
    matrix is ``(A W)(D W)^T`` for query means A and passage means D.
    """

    query_means: np.ndarray
    passage_means: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    teacher_scores: np.ndarray
    student_scores: np.ndarray
    student_weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.positives)

    @property
    def num_candidates(self) -> int:
        return self.passage_means.shape[0]

    def negative_set(self, i: int) -> list[int]:
        """Candidate indices acting as negatives for query ``i``."""
        return [j for j in range(self.num_candidates) if j != self.positives[i]]


@dataclass
class LossReport:
    total: float
    ce_term: float
    kl_term: float
    student_probs: np.ndarray = field(repr=False)
    teacher_probs: np.ndarray = field(repr=False)

    def record(self, step: int) -> dict:
        return {"step": step, "total": self.total, "ce_term": self.ce_term, "kl_term": self.kl_term}


class Gradients(NamedTuple):
    student: np.ndarray
    teacher: np.ndarray


class TeacherCache:
    """Memoizes frozen-teacher token encodings by token-id sequence."""

    def __init__(self, table: EmbeddingTable, proj: Projection):
        self.table = table
        self.proj = proj
        self._queries: dict[bytes, np.ndarray] = {}
        self._docs: dict[bytes, np.ndarray] = {}

    def query(self, ids: np.ndarray) -> np.ndarray:
        key = ids.tobytes()
        if key not in self._queries:
            self._queries[key] = encode_teacher_query(ids, self.table, self.proj).token_vectors
        return self._queries[key]

    def doc(self, ids: np.ndarray) -> np.ndarray:
        key = ids.tobytes()
        if key not in self._docs:
            self._docs[key] = encode_teacher_doc(ids, self.table, self.proj).token_vectors
        return self._docs[key]


def build_batch(triplets: Sequence[TrainingTriplet], table: EmbeddingTable,
                teacher: Projection | TeacherCache, student: Projection,
                mode: str = "in_batch") -> Batch:
    if mode == "in_batch" and len(triplets) < 2:
        raise ValueError("in-batch distillation needs at least 2 triplets per batch")
    if not triplets:
        raise ValueError("empty batch")
    cache = teacher if isinstance(teacher, TeacherCache) else TeacherCache(table, teacher)

    passages: list[np.ndarray] = []
    slot: dict[bytes, int] = {}
    pos, neg = [], []
    for tr in triplets:
        for ids, out in ((tr.positive_ids, pos), (tr.negative_ids, neg)):
            key = ids.tobytes()
            if key not in slot:
                slot[key] = len(passages)
                passages.append(ids)
            out.append(slot[key])
    if len(passages) < 2 * len(triplets):
        warnings.warn(
            f"batch has {2 * len(triplets) - len(passages)} duplicate passages; scoring each once",
            DuplicatePassageWarning,
            stacklevel=2,
        )

    doc_tokens = [cache.doc(ids) for ids in passages]
    teacher_scores = np.stack([maxsim_many(cache.query(tr.query_ids), doc_tokens) for tr in triplets])
    q_means = np.stack([table.mean(tr.query_ids) for tr in triplets])
    p_means = np.stack([table.mean(ids) for ids in passages])
    w = student.weights
    return Batch(
        query_means=q_means,
        passage_means=p_means,
        positives=np.array(pos),
        negatives=np.array(neg),
        teacher_scores=teacher_scores,
        student_scores=(q_means @ w) @ (p_means @ w).T,
        student_weights=w,
    )


def rescore(batch: Batch, weights: np.ndarray) -> Batch:
    """Same batch with student scores recomputed for other student weights."""
    s = (batch.query_means @ weights) @ (batch.passage_means @ weights).T
    return replace(batch, student_scores=s, student_weights=weights)


def pool_mask(batch: Batch, mode: str) -> np.ndarray:
    """(B, C) boolean mask of the passages each query's distributions range over."""
    if mode == "in_batch":
        return np.ones((batch.size, batch.num_candidates), dtype=bool)
    mask = np.zeros((batch.size, batch.num_candidates), dtype=bool)
    rows = np.arange(batch.size)
    mask[rows, batch.positives] = True
    mask[rows, batch.negatives] = True
    return mask


def _masked_softmax(scores: np.ndarray, mask: np.ndarray, temperature: float) -> np.ndarray:
    return softmax(np.where(mask, scores, -np.inf), temperature)


def distributions(batch: Batch, config: DistillConfig) -> tuple[np.ndarray, np.ndarray]:
    """Student P (temperature 1) and teacher P-hat (temperature tau), shape (B, C).

    Entries outside a query's candidate pool are exactly zero.
    """
    mask = pool_mask(batch, config.mode)
    p = _masked_softmax(batch.student_scores, mask, 1.0)
    p_hat = _masked_softmax(batch.teacher_scores, mask, config.tau)
    return p, p_hat


def _pair_scores(batch: Batch) -> np.ndarray:
    rows = np.arange(batch.size)
    return np.stack([batch.student_scores[rows, batch.positives],
                     batch.student_scores[rows, batch.negatives]], axis=1)


def loss(batch: Batch, config: DistillConfig) -> LossReport:
    if batch.size == 0:
        raise ValueError("empty batch")
    if np.any(batch.positives < 0) or np.any(batch.positives >= batch.num_candidates):
        raise ValueError("positive passage missing from the candidate pool")
    ce = -log_softmax(_pair_scores(batch))[:, 0]
    p, p_hat = distributions(batch, config)
    if config.mode == "none":
        kl = np.zeros(batch.size)
    else:
        mask = pool_mask(batch, config.mode)
        # both distributions are strictly positive on the pool
        log_p = np.where(mask, np.log(np.where(mask, p, 1.0)), 0.0)
        log_p_hat = np.where(mask, np.log(np.where(mask, p_hat, 1.0)), 0.0)
        kl = np.maximum((p_hat * (log_p_hat - log_p)).sum(axis=1), 0.0)
    ce_term = float(ce.mean())
    kl_term = float(kl.mean())
    total = config.gamma * ce_term + (1.0 - config.gamma) * kl_term
    return LossReport(total, ce_term, kl_term, p, p_hat)


def score_gradient(batch: Batch, config: DistillConfig) -> np.ndarray:
    """d loss / d student_scores, shape (B, C)."""
    n = batch.size
    rows = np.arange(n)
    g = np.zeros_like(batch.student_scores)
    q = softmax(_pair_scores(batch))
    np.add.at(g, (rows, batch.positives), config.gamma * (q[:, 0] - 1.0) / n)
    np.add.at(g, (rows, batch.negatives), config.gamma * q[:, 1] / n)
    if config.mode != "none":
        p, p_hat = distributions(batch, config)
        g += (1.0 - config.gamma) * (p - p_hat) / n
    return g


def gradient(batch: Batch, config: DistillConfig) -> Gradients:
    """Analytic gradient of :func:`loss` w.r.t. the student projection.

    With S = A W W^T D^T the chain rule gives (A^T G D + D^T G^T A) W.
    The teacher is frozen, so its gradient is an all-zero buffer.
    """
    g = score_gradient(batch, config)
    a, d, w = batch.query_means, batch.passage_means, batch.student_weights
    m = a.T @ g @ d
    return Gradients(student=(m + m.T) @ w, teacher=np.zeros_like(w))


# ---------------------------------------------------------------- teacher


def maxsim_backward(query_emb: np.ndarray, doc_emb: np.ndarray, weights: np.ndarray,
                    upstream: float = 1.0) -> tuple[float, np.ndarray]:
    """MaxSim of normalized projected rows and its gradient w.r.t. ``weights``.

    ``doc_emb`` must already exclude filtered (punctuation) rows.
    """
    u = query_emb @ weights
    v = doc_emb @ weights
    nu = np.linalg.norm(u, axis=1, keepdims=True)
    nv = np.linalg.norm(v, axis=1, keepdims=True)
    qn, dn = u / nu, v / nv
    sims = qn @ dn.T
    best = sims.argmax(axis=1)
    score = float(sims[np.arange(len(best)), best].sum())
    d_qn = upstream * dn[best]
    d_dn = np.zeros_like(dn)
    np.add.at(d_dn, best, upstream * qn)
    d_u = (d_qn - qn * (d_qn * qn).sum(axis=1, keepdims=True)) / nu
    d_v = (d_dn - dn * (d_dn * dn).sum(axis=1, keepdims=True)) / nv
    return score, query_emb.T @ d_u + doc_emb.T @ d_v


def _doc_rows(ids: np.ndarray, table: EmbeddingTable) -> np.ndarray:
    punct = table.vocab.punctuation_ids
    keep = [int(i) not in punct for i in ids]
    if not any(keep):
        raise ValueError("every passage token was filtered as punctuation")
    return table.lookup(ids[np.array(keep)])


def teacher_loss_and_grad(triplets: Sequence[TrainingTriplet], table: EmbeddingTable,
                          weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Pairwise softmax cross-entropy over (positive, negative) MaxSim scores."""
    total = 0.0
    grad = np.zeros_like(weights)
    n = len(triplets)
    for tr in triplets:
        q = table.lookup(tr.query_ids)
        dp = _doc_rows(tr.positive_ids, table)
        dn = _doc_rows(tr.negative_ids, table)
        sp, gp = maxsim_backward(q, dp, weights)
        sn, gn = maxsim_backward(q, dn, weights)
        probs = softmax([sp, sn])
        total += -float(log_softmax([sp, sn])[0])
        grad += ((probs[0] - 1.0) * gp + probs[1] * gn) / n
    return total / n, grad


def teacher_loss(triplets, table, weights) -> float:
    total = 0.0
    for tr in triplets:
        q = table.lookup(tr.query_ids)
        q = q @ weights
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        scores = []
        for ids in (tr.positive_ids, tr.negative_ids):
            d = _doc_rows(ids, table) @ weights
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            scores.append((q @ d.T).max(axis=1).sum())
        total += -float(log_softmax(scores)[0])
    return total / len(triplets)


# ---------------------------------------------------------------- training


def batch_schedule(n: int, batch_size: int, steps: int, rng: np.random.Generator):
    """Yield index arrays, reshuffling at every epoch boundary."""
    if batch_size > n:
        raise ValueError(f"batch size {batch_size} exceeds {n} training triplets")
    order = rng.permutation(n)
    pos = 0
    for _ in range(steps):
        if pos + batch_size > n:
            order = rng.permutation(n)
            pos = 0
        yield order[pos:pos + batch_size]
        pos += batch_size


def train_teacher(triplets: Sequence[TrainingTriplet], table: EmbeddingTable, config: DistillConfig,
                  init: Projection, on_step: Callable[[int, float], None] | None = None) -> Projection:
    """Fine-tune the MaxSim projection with plain mini-batch gradient descent."""
    rng = np.random.default_rng(config.seed)
    w = init.weights.copy()
    for step, idx in enumerate(batch_schedule(len(triplets), config.batch_size, config.steps, rng), 1):
        value, grad = teacher_loss_and_grad([triplets[i] for i in idx], table, w)
        w = w - config.learning_rate * grad
        if not (math.isfinite(value) and np.all(np.isfinite(w))):
            raise DivergenceError(step, value)
        if on_step is not None:
            on_step(step, value)
    return Projection(w)


def distill_student(triplets: Sequence[TrainingTriplet], table: EmbeddingTable,
                    teacher: Projection, config: DistillConfig,
                    init: Projection | None = None,
                    on_step: Callable[[dict], None] | None = None) -> tuple[Projection, list[dict]]:
    """Distill the frozen teacher into a pooled student.

    The student starts from the teacher's weights unless ``init`` is given.
    Returns the trained projection and one loss record per step.
    """
    rng = np.random.default_rng(config.seed)
    cache = TeacherCache(table, teacher)
    student = (init or teacher).copy()
    records = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DuplicatePassageWarning)
        for step, idx in enumerate(batch_schedule(len(triplets), config.batch_size, config.steps, rng), 1):
            batch = build_batch([triplets[i] for i in idx], table, cache, student,
                                mode="triplet" if config.mode != "in_batch" else "in_batch")
            report = loss(batch, config)
            if not math.isfinite(report.total):
                raise DivergenceError(step, report.total)
            grad = gradient(batch, config).student
            new_w = student.weights - config.learning_rate * grad
            if not np.all(np.isfinite(new_w)):
                raise DivergenceError(step, report.total)
            student = Projection(new_w)
            rec = report.record(step)
            records.append(rec)
            if on_step is not None:
                on_step(rec)
    return student, records
