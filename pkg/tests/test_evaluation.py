import math

import pytest

from tctcolbert.evaluation import evaluate, format_report, mrr_at_k, ndcg_at_k, recall_at_k
from tctcolbert.trec import read_qrels, read_run, write_qrels, write_run

# five queries with hand-computed metric values
RUN = {
    "q1": [("a", 9.0), ("b", 8.0), ("c", 7.0)],
    "q2": [("x", 3.0), ("y", 2.0), ("rel", 1.0)],
    "q3": [(f"n{i}", float(20 - i)) for i in range(10)] + [("late", 0.5)],
    "q4": [("g1", 5.0), ("g2", 4.0), ("z", 1.0)],
    "q5": [("u", 1.0), ("v", 0.5)],
}
QRELS = {
    "q1": {"a": 1},
    "q2": {"rel": 1, "missing": 1},
    "q3": {"late": 1},
    "q4": {"g1": 1, "g2": 2},
    "q5": {"w": 1, "u": 0},
}


def test_mrr_fixture():
    # 1, 1/3, 0, 1, 0
    assert mrr_at_k(RUN, QRELS) == (1 + 1 / 3 + 0 + 1 + 0) / 5


def test_mrr_cutoff():
    assert mrr_at_k({"q3": RUN["q3"]}, QRELS, 10) == 0.0
    assert mrr_at_k({"q3": RUN["q3"]}, QRELS, 11) == 1 / 11


def test_recall_fixture():
    # 1, 1/2, 1, 1, 0
    assert recall_at_k(RUN, QRELS, 1000) == (1 + 0.5 + 1 + 1 + 0) / 5
    assert recall_at_k({"q3": RUN["q3"]}, QRELS, 10) == 0.0


def test_recall_set_oracle(rng):
    ids = [f"d{i}" for i in range(40)]
    run, qrels = {}, {}
    for q in range(6):
        ranked = list(rng.permutation(ids)[:15])
        run[f"q{q}"] = [(d, float(-i)) for i, d in enumerate(ranked)]
        qrels[f"q{q}"] = {d: 1 for d in rng.choice(ids, size=4, replace=False)}
    want = sum(
        len(set(qrels[q]) & {d for d, _ in run[q][:10]}) / len(qrels[q]) for q in run
    ) / len(run)
    assert recall_at_k(run, qrels, 10) == pytest.approx(want, abs=1e-15)


def test_ndcg_fixture():
    l2 = math.log2
    # q4: DCG = (2^1-1)/log2(2) + (2^2-1)/log2(3); IDCG = 3/1 + 1/log2(3)
    q4 = (1 + 3 / l2(3)) / (3 + 1 / l2(3))
    q1 = 1.0
    q2 = (1 / l2(4)) / (1 + 1 / l2(3))
    q3 = 0.0
    q5 = 0.0
    assert ndcg_at_k(RUN, QRELS) == pytest.approx((q1 + q2 + q3 + q4 + q5) / 5, abs=1e-9)


def test_ndcg_ideal_and_exclusions():
    assert ndcg_at_k({"q": [("a", 1.0)]}, {"q": {"a": 1}}) == 1.0
    assert ndcg_at_k({"q": [("b", 1.0)]}, {"q": {"a": 1}}) == 0.0
    ideal = {"q": [("h", 3.0), ("m", 2.0), ("l", 1.0)]}
    assert ndcg_at_k(ideal, {"q": {"l": 1, "h": 3, "m": 2}}) == pytest.approx(1.0)
    # zero-ideal queries are excluded rather than scored 0
    assert ndcg_at_k({"q": [("a", 1.0)], "r": [("a", 1.0)]}, {"q": {"a": 1}, "r": {"a": 0}}) == 1.0


def test_missing_qrels_excluded(caplog):
    assert mrr_at_k({"q1": RUN["q1"], "nope": [("a", 1.0)]}, QRELS) == 1.0
    assert "excluded" in caplog.text


def test_metrics_bounded(rng):
    ids = [f"d{i}" for i in range(20)]
    for _ in range(20):
        run = {"q": [(d, 0.0) for d in rng.permutation(ids)[:10]]}
        qrels = {"q": {d: int(rng.integers(0, 4)) for d in rng.choice(ids, 5, replace=False)}}
        for v in evaluate(run, qrels).values():
            assert 0.0 <= v <= 1.0


def test_mrr_tail_permutation_invariant(rng):
    run = [("n1", 5.0), ("rel", 4.0), ("n2", 3.0), ("n3", 2.0), ("n4", 1.0)]
    tail = run[2:]
    perm = [tail[i] for i in rng.permutation(3)]
    q = {"q": {"rel": 1}}
    assert mrr_at_k({"q": run}, q) == mrr_at_k({"q": run[:2] + perm}, q) == 0.5


def test_trec_roundtrip(tmp_path):
    write_run(RUN, tmp_path / "r.trec", "test")
    assert read_run(tmp_path / "r.trec") == RUN
    line = (tmp_path / "r.trec").read_text().splitlines()[0]
    assert line.split() == ["q1", "Q0", "a", "1", "9.000000", "test"]
    write_qrels(QRELS, tmp_path / "q.txt")
    assert read_qrels(tmp_path / "q.txt") == QRELS


def test_report_format():
    text = format_report({"mrr@10": 1.0, "ndcg@10": 0.5})
    assert text.splitlines() == ["mrr@10 \t1.0000", "ndcg@10\t0.5000"]
