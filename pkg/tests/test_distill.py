import json
import math
import warnings

import numpy as np
import pytest

from tctcolbert.distill import (
    Batch, DistillConfig, DivergenceError, DuplicatePassageWarning, TrainingTriplet,
    build_batch, distill_student, distributions, gradient, loss, maxsim_backward,
    rescore, teacher_loss, teacher_loss_and_grad, train_teacher,
)
from tctcolbert.encoder import (
    EmbeddingTable, Projection, Vocabulary, encode_teacher_doc, encode_teacher_query,
)
from tctcolbert.linalg import softmax
from tctcolbert.scoring import maxsim


def small_world(seed=0, n_triplets=6, vocab=40, t=8, h=4):
    rng = np.random.default_rng(seed)
    tokens = [f"t{i}" for i in range(vocab - 2)] + [",", "."]
    table = EmbeddingTable.random(Vocabulary(tokens), t=t, seed=seed)
    triplets = []
    for _ in range(n_triplets):
        q = rng.integers(1, vocab - 2, size=rng.integers(2, 5))
        p = rng.integers(1, vocab + 1, size=rng.integers(3, 8))
        n = rng.integers(1, vocab + 1, size=rng.integers(3, 8))
        p[0], n[0] = 1 + rng.integers(vocab - 3), 1 + rng.integers(vocab - 3)
        triplets.append(TrainingTriplet(q, p, n))
    return table, triplets, Projection.random(t, h, seed=seed + 1), Projection.random(t, h, seed=seed + 2)


def fd_gradient(batch, config, eps=1e-5):
    w0 = batch.student_weights
    g = np.zeros_like(w0)
    for idx in np.ndindex(*w0.shape):
        w = w0.copy()
        w[idx] += eps
        up = loss(rescore(batch, w), config).total
        w[idx] -= 2 * eps
        down = loss(rescore(batch, w), config).total
        g[idx] = (up - down) / (2 * eps)
    return g


def test_triplet_validation():
    with pytest.raises(ValueError):
        TrainingTriplet([1], [2, 3], [2, 3])
    with pytest.raises(ValueError):
        TrainingTriplet([], [2], [3])


def test_config_defaults():
    cfg = DistillConfig()
    assert (cfg.tau, cfg.gamma, cfg.batch_size, cfg.steps) == (0.25, 0.1, 8, 2000)
    with pytest.raises(ValueError):
        DistillConfig(mode="bogus")


@pytest.mark.parametrize("size", [2, 3])
def test_batch_counts(size):
    table, triplets, teacher, student = small_world(n_triplets=size)
    batch = build_batch(triplets, table, teacher, student)
    assert batch.teacher_scores.shape == (size, 2 * size)
    assert batch.student_scores.shape == (size, 2 * size)
    for i in range(size):
        assert len(batch.negative_set(i)) == 2 * size - 1


def test_batch_teacher_scores_match_direct_maxsim():
    table, triplets, teacher, student = small_world(n_triplets=3)
    batch = build_batch(triplets, table, teacher, student)
    passages = [p for tr in triplets for p in (tr.positive_ids, tr.negative_ids)]
    for i, tr in enumerate(triplets):
        q = encode_teacher_query(tr.query_ids, table, teacher).token_vectors
        for j, p in enumerate(passages):
            d = encode_teacher_doc(p, table, teacher).token_vectors
            assert batch.teacher_scores[i, j] == pytest.approx(maxsim(q, d), abs=1e-9)


def test_batch_errors_and_dedup():
    table, triplets, teacher, student = small_world(n_triplets=3)
    with pytest.raises(ValueError):
        build_batch(triplets[:1], table, teacher, student, mode="in_batch")
    dup = [triplets[0], TrainingTriplet(triplets[1].query_ids, triplets[0].positive_ids, triplets[1].negative_ids)]
    with pytest.warns(DuplicatePassageWarning):
        batch = build_batch(dup, table, teacher, student)
    assert batch.num_candidates == 3
    assert batch.positives[0] == batch.positives[1]


def hand_batch(teacher, student, positives=(0, 2), negatives=(1, 3)):
    teacher = np.asarray(teacher, float)
    student = np.asarray(student, float)
    b, c = student.shape
    return Batch(np.zeros((b, 1)), np.zeros((c, 1)), np.array(positives), np.array(negatives),
                 teacher, student, np.zeros((1, 1)))


def test_distributions_examples():
    batch = hand_batch([[1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0]], np.zeros((2, 4)))
    _, p_hat = distributions(batch, DistillConfig(mode="in_batch"))
    np.testing.assert_allclose(p_hat, 0.25)
    sharp = hand_batch([[1.0, 0.0, 0, 0], [1.0, 0.0, 0, 0]], np.zeros((2, 4)), positives=(0, 0), negatives=(1, 1))
    a = distributions(sharp, DistillConfig(mode="triplet", tau=0.25))[1]
    b = distributions(sharp, DistillConfig(mode="triplet", tau=1.0))[1]
    assert a[0, 0] > b[0, 0]


def test_distributions_closed_form():
    t = np.array([[2.0, 1.0, 0.5, -1.0], [0.0, 1.0, 3.0, 2.0]])
    s = np.array([[0.3, 0.1, -0.2, 0.0], [1.0, 0.0, 0.5, 0.2]])
    batch = hand_batch(t, s)
    p, p_hat = distributions(batch, DistillConfig(mode="in_batch", tau=0.25))
    for i in range(2):
        z = sum(math.exp(v) for v in s[i])
        zt = sum(math.exp(v / 0.25) for v in t[i])
        np.testing.assert_allclose(p[i], [math.exp(v) / z for v in s[i]], atol=1e-12)
        np.testing.assert_allclose(p_hat[i], [math.exp(v / 0.25) / zt for v in t[i]], atol=1e-12)
    p, p_hat = distributions(batch, DistillConfig(mode="triplet", tau=0.25))
    e = math.exp(0.3) + math.exp(0.1)
    np.testing.assert_allclose(p[0], [math.exp(0.3) / e, math.exp(0.1) / e, 0, 0], atol=1e-12)
    assert p_hat[1, 0] == 0 and p_hat[1, 1] == 0


def test_loss_boundaries():
    t = np.array([[2.0, 1.0, 0.5, -1.0], [0.0, 1.0, 3.0, 2.0]])
    s = np.array([[0.3, 0.1, -0.2, 0.0], [1.0, 0.0, 0.5, 0.2]])
    batch = hand_batch(t, s)
    base = loss(batch, DistillConfig(gamma=0.5))
    assert loss(batch, DistillConfig(gamma=1.0)).total == pytest.approx(base.ce_term, abs=1e-12)
    assert loss(batch, DistillConfig(gamma=0.0)).total == pytest.approx(base.kl_term, abs=1e-12)
    assert loss(batch, DistillConfig(mode="none")).kl_term == 0.0


def test_loss_equal_distributions():
    s = np.array([[np.log(3.0), 0.0], [0.0, np.log(0.25)]])
    batch = hand_batch(0.25 * s, s, positives=(0, 0), negatives=(1, 1))
    rep = loss(batch, DistillConfig(mode="triplet", tau=0.25, gamma=0.1))
    assert rep.kl_term == pytest.approx(0.0, abs=1e-12)
    p0 = 3 / 4
    p1 = 1 / (1 + 0.25)
    assert rep.ce_term == pytest.approx(-(math.log(p0) + math.log(p1)) / 2, abs=1e-12)


def test_missing_positive_is_error():
    batch = hand_batch(np.zeros((2, 4)), np.zeros((2, 4)), positives=(0, 7))
    with pytest.raises(ValueError):
        loss(batch, DistillConfig())


@pytest.mark.parametrize("mode", ["none", "triplet", "in_batch"])
@pytest.mark.parametrize("gamma", [0.0, 0.1, 1.0])
def test_gradient_matches_finite_differences(mode, gamma):
    table, triplets, teacher, student = small_world(seed=3, n_triplets=4)
    batch = build_batch(triplets, table, teacher, student)
    cfg = DistillConfig(mode=mode, gamma=gamma)
    analytic = gradient(batch, cfg).student
    numeric = fd_gradient(batch, cfg)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)


def test_gradient_stationary_points():
    table, triplets, teacher, _ = small_world(n_triplets=3)
    zero = Projection(np.zeros((8, 4)))
    batch = build_batch(triplets, table, teacher, zero)
    assert np.linalg.norm(gradient(batch, DistillConfig()).student) < 1e-8
    # student distribution equal to the teacher's and no hard-label weight
    s = np.array([[1.0, -2.0, 0.5, 0.0]])
    matched = hand_batch(0.25 * s, s, positives=(0,), negatives=(1,))
    cfg = DistillConfig(gamma=0.0, tau=0.25, mode="in_batch")
    from tctcolbert.distill import score_gradient
    assert np.abs(score_gradient(matched, cfg)).max() < 1e-12
    assert not np.any(gradient(batch, DistillConfig()).teacher)


def test_triplet_equals_in_batch_for_single_query():
    table, triplets, teacher, student = small_world(n_triplets=1)
    batch = build_batch(triplets, table, teacher, student, mode="triplet")
    a = loss(batch, DistillConfig(mode="triplet"))
    b = loss(batch, DistillConfig(mode="in_batch"))
    assert a.total == b.total
    np.testing.assert_array_equal(gradient(batch, DistillConfig(mode="triplet")).student,
                                  gradient(batch, DistillConfig(mode="in_batch")).student)


def test_teacher_gradient_finite_differences():
    table, triplets, teacher, _ = small_world(seed=5, n_triplets=3)
    w = teacher.weights
    value, grad = teacher_loss_and_grad(triplets, table, w)
    assert value == pytest.approx(teacher_loss(triplets, table, w), abs=1e-12)
    eps = 1e-6
    for idx in np.ndindex(*w.shape):
        wp, wm = w.copy(), w.copy()
        wp[idx] += eps
        wm[idx] -= eps
        fd = (teacher_loss(triplets, table, wp) - teacher_loss(triplets, table, wm)) / (2 * eps)
        assert grad[idx] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_maxsim_backward_score(rng):
    q, d, w = rng.normal(size=(3, 6)), rng.normal(size=(5, 6)), rng.normal(size=(6, 4))
    norm = lambda m: m / np.linalg.norm(m, axis=1, keepdims=True)
    score, _ = maxsim_backward(q, d, w)
    assert score == pytest.approx(maxsim(norm(q @ w), norm(d @ w)), abs=1e-12)


def test_train_teacher_zero_steps_and_determinism():
    table, triplets, teacher, _ = small_world(n_triplets=6)
    cfg = DistillConfig(steps=0, batch_size=2)
    np.testing.assert_array_equal(train_teacher(triplets, table, cfg, teacher).weights, teacher.weights)
    cfg = DistillConfig(steps=15, batch_size=2, learning_rate=0.5, seed=9)
    a = train_teacher(triplets, table, cfg, teacher)
    b = train_teacher(triplets, table, cfg, teacher)
    assert a.weights.tobytes() == b.weights.tobytes()
    assert not np.array_equal(a.weights, teacher.weights)


def test_divergence_reports_step():
    table, triplets, teacher, _ = small_world(n_triplets=6)
    cfg = DistillConfig(steps=50, batch_size=2, learning_rate=1e300)
    with pytest.raises(DivergenceError) as info:
        distill_student(triplets, table, teacher, cfg)
    assert info.value.step >= 1


def test_distill_freezes_teacher_and_table():
    table, triplets, teacher, _ = small_world(n_triplets=6)
    t_before, w_before = table.table.tobytes(), teacher.weights.tobytes()
    student, records = distill_student(triplets, table, teacher, DistillConfig(steps=10, batch_size=3, learning_rate=1.0))
    assert table.table.tobytes() == t_before
    assert teacher.weights.tobytes() == w_before
    assert not np.array_equal(student.weights, teacher.weights)
    assert [r["step"] for r in records] == list(range(1, 11))
    for r in records:
        assert r["total"] >= 0 and r["kl_term"] >= 0 and r["ce_term"] >= 0
    json.dumps(records)


def test_gamma_one_matches_no_distillation():
    table, triplets, teacher, _ = small_world(n_triplets=6)
    base = dict(steps=12, batch_size=3, learning_rate=2.0, gamma=1.0, seed=4)
    ref, ref_rec = distill_student(triplets, table, teacher, DistillConfig(mode="none", **base))
    for mode in ("triplet", "in_batch"):
        st, rec = distill_student(triplets, table, teacher, DistillConfig(mode=mode, **base))
        np.testing.assert_array_equal(st.weights, ref.weights)
        assert [r["total"] for r in rec] == [r["total"] for r in ref_rec]


def test_fixed_seed_reproducible_losses():
    table, triplets, teacher, _ = small_world(n_triplets=6)
    cfg = DistillConfig(steps=20, batch_size=3, learning_rate=1.0, seed=2)
    _, a = distill_student(triplets, table, teacher, cfg)
    _, b = distill_student(triplets, table, teacher, cfg)
    assert a == b


@pytest.fixture(scope="module")
def lexical_gap():
    from tctcolbert.datagen import SynthConfig, generate
    from tctcolbert.pipeline import prepare
    # few query-only synonyms, no unjudged near-duplicates: a gap a linear map can close
    cfg = SynthConfig(num_topics=5, docs_per_topic=30, vocab_size=300, num_queries=100,
                      num_train_queries=2000, synonym_fraction=0.15, synonym_rate=1.0,
                      duplicate_fraction=0.0, seed=0)
    return prepare(generate(cfg), seed=0)


def test_teacher_training_beats_initialization(lexical_gap):
    from tctcolbert.pipeline import TEACHER_LR, teacher_mrr
    init = Projection.random(64, 32, seed=1)
    trained = train_teacher(lexical_gap.triplets, lexical_gap.table,
                            DistillConfig(learning_rate=TEACHER_LR * 2, steps=2000, seed=0), init)
    assert teacher_mrr(lexical_gap, trained) > teacher_mrr(lexical_gap, init)


def test_loss_decreases_over_first_100_steps():
    from tctcolbert.datagen import SynthConfig, generate
    from tctcolbert.pipeline import STUDENT_LR, prepare
    prep = prepare(generate(SynthConfig(seed=0)), seed=0)
    teacher = Projection.random(64, 32, seed=1)
    cfg = DistillConfig(mode="in_batch", learning_rate=STUDENT_LR, steps=100, batch_size=16, seed=0)
    _, records = distill_student(prep.triplets, prep.table, teacher, cfg)
    smoothed = np.array([r["total"] for r in records]).reshape(10, 10).mean(axis=1)
    assert np.all(np.diff(smoothed) <= 0)
