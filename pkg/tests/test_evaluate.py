import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import rr, student_t_two_sided
from splade_lab.corpus import SPECIAL_TOKENS, BaseVocabulary
from splade_lab.encoder import EncoderConfig, SparseEncoder, SparseVector, init_encoder
from splade_lab.evaluate import (
    EvalError,
    evaluate_rankings,
    evaluate_run,
    expanded_terms,
    expansion_stats,
    ndcg_at_k,
    paired_ttest,
    prune_query_terms,
    random_rr_baseline,
    recall_at_k,
    rr_at_k,
)
from splade_lab.search import Ranking, write_run
from splade_lab.vocab import ControllerSpec, build_controller

# three queries with hand-computed metrics
FIXTURE_QRELS = {
    "q1": {"a": 1},
    "q2": {"b": 3, "c": 1},
    "q3": {"x": 2},
}
FIXTURE_RUN = {
    "q1": Ranking("q1", [("a", 3.0), ("b", 2.0)]),
    "q2": Ranking("q2", [("z", 3.0), ("c", 2.0), ("b", 1.0)]),
    "q3": Ranking("q3", [("y", 1.0)]),
}


def test_rr_examples():
    assert rr_at_k(["a", "b"], {"a": 1}) == 1.0
    assert rr_at_k(["b", "a"], {"a": 1}) == 0.5
    assert rr_at_k([f"n{i}" for i in range(10)] + ["a"], {"a": 1}) == 0.0


def test_ndcg_examples():
    assert ndcg_at_k(["a", "b"], {"a": 3, "b": 1}) == 1.0
    assert ndcg_at_k(["n", "r"], {"r": 3}) == pytest.approx(math.log(2) / math.log(3), abs=1e-15)
    assert ndcg_at_k(["n", "r"], {"r": 3}) == pytest.approx(0.6309, abs=1e-4)
    assert ndcg_at_k([], {"r": 1}) == 0.0
    assert ndcg_at_k(["r"], {"r": 0}) == 0.0


def test_recall_examples():
    assert recall_at_k(["a", "b"], {"a": 1, "b": 1}) == 1.0
    assert recall_at_k(["a"], {"a": 1, "b": 1}) == 0.5
    assert recall_at_k(["z"], {"a": 1}) == 0.0
    with pytest.raises(EvalError):
        recall_at_k(["a"], {"a": 0})


def test_three_query_fixture_exact():
    report = evaluate_rankings({"s": FIXTURE_RUN}, FIXTURE_QRELS, ["rr@10", "ndcg@10", "recall@1000"])
    pq = report.per_query["s"]
    assert pq["rr@10"] == {"q1": 1.0, "q2": 0.5, "q3": 0.0}
    # q2: ranked gains [0, 1, 7] vs ideal [7, 1]
    dcg = 1 / math.log2(3) + 7 / math.log2(4)
    idcg = 7 / math.log2(2) + 1 / math.log2(3)
    assert pq["ndcg@10"] == {"q1": 1.0, "q2": dcg / idcg, "q3": 0.0}
    assert pq["recall@1000"] == {"q1": 1.0, "q2": 1.0, "q3": 0.0}
    assert report.means["s"]["rr@10"] == 0.5


def test_ttest_conventions():
    assert paired_ttest([1, 2, 3], [1, 2, 3]) == 1.0
    assert paired_ttest([2, 2, 2, 2], [1, 1, 1, 1]) == 0.0
    with pytest.raises(EvalError):
        paired_ttest([1, 2], [1])


def test_ttest_against_reference_cdf():
    diffs = [1, -1, 2, 0, 1]
    got = paired_ttest(diffs, [0] * 5)
    assert abs(got - student_t_two_sided(diffs)) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3, allow_nan=False, allow_infinity=False), min_size=3, max_size=30))
def test_ttest_random_against_reference(diffs):
    if np.std(diffs) < 1e-6:
        return
    assert abs(paired_ttest(diffs, [0.0] * len(diffs)) - student_t_two_sided(diffs)) <= 1e-6


def test_identical_runs_not_significant(tmp_path):
    write_run(list(FIXTURE_RUN.values()), "a", tmp_path / "a.trec")
    write_run(list(FIXTURE_RUN.values()), "b", tmp_path / "b.trec")
    report = evaluate_run({"a": tmp_path / "a.trec", "b": tmp_path / "b.trec"}, FIXTURE_QRELS)
    for m in report.metrics:
        assert report.pvalues[m][("a", "b")] == report.pvalues[m][("b", "a")] == 1.0
        assert report.pvalues[m][("a", "a")] == 1.0
        assert not report.significant(m, "a", "b")


def test_perfect_run():
    qrels = {"q1": {"a": 1}, "q2": {"b": 2}}
    run = {"q1": Ranking("q1", [("a", 1.0)]), "q2": Ranking("q2", [("b", 1.0)])}
    report = evaluate_rankings({"p": run}, qrels)
    assert all(v == 1.0 for v in report.means["p"].values())


def test_significance_flags_and_files(tmp_path):
    qrels = {f"q{i}": {"good": 1} for i in range(30)}
    good = {q: Ranking(q, [("good", 1.0)]) for q in qrels}
    bad = {q: Ranking(q, [("junk", 1.0)]) for q in qrels}
    report = evaluate_rankings({"good": good, "bad": bad}, qrels, ["rr@10"])
    assert report.significant("rr@10", "good", "bad")
    assert report.superscripts("rr@10", "good") == "b"
    paths = report.write(tmp_path)
    assert [p.name for p in paths] == ["report.tsv", "report.per_query.tsv", "report.significance.tsv"]
    sig = paths[2].read_text().splitlines()
    assert sig[1].split("\t")[-1] == "1"


def test_round_trip_run_equals_in_memory(tmp_path):
    write_run(list(FIXTURE_RUN.values()), "s", tmp_path / "s.trec")
    from_file = evaluate_run({"s": tmp_path / "s.trec"}, FIXTURE_QRELS)
    direct = evaluate_rankings({"s": FIXTURE_RUN}, FIXTURE_QRELS)
    assert from_file.per_query == direct.per_query


def test_unknown_queries_counted(caplog):
    run = dict(FIXTURE_RUN, extra=Ranking("extra", [("a", 1.0), ("b", 0.5)]))
    report = evaluate_rankings({"s": run}, FIXTURE_QRELS)
    assert report.unknown_query_lines == {"s": 2}


@settings(max_examples=100, deadline=None)
@given(st.permutations(list("abcdefghijkl")), st.sampled_from(list("abcdefghijkl")), st.integers(1, 3))
def test_moving_relevant_up_never_hurts(ranking, rel, grade):
    judged = {rel: grade}
    i = ranking.index(rel)
    if i == 0:
        return
    up = list(ranking)
    up[i - 1], up[i] = up[i], up[i - 1]
    assert rr_at_k(up, judged) >= rr_at_k(ranking, judged)
    assert ndcg_at_k(up, judged) >= ndcg_at_k(ranking, judged)
    assert rr_at_k(ranking, judged) == rr(ranking, {rel})


def test_random_baseline_close_to_analytic():
    # one relevant doc among n: E[RR@10] = (1/n) * H_10
    doc_ids = [f"d{i}" for i in range(100)]
    qrels = {"q": {"d5": 1}}
    expected = sum(1 / r for r in range(1, 11)) / 100
    assert random_rr_baseline(qrels, doc_ids, trials=20000, seed=1) == pytest.approx(expected, rel=0.08)


def test_expanded_terms_example():
    # query "a b" encoded as {a, c}: only c is expanded
    q = SparseVector.from_dict({4: 1.0, 6: 0.5})
    assert expanded_terms(q, [4, 5], base_size=10) == {6}
    latent = SparseVector.from_dict({4: 1.0, 12: 0.5})
    assert expanded_terms(latent, [4], base_size=10) == {12}


def test_expansion_stats_latent_only():
    vocab = BaseVocabulary(SPECIAL_TOKENS + tuple(f"w{i}" for i in range(20)))
    c = build_controller(ControllerSpec("latent_only_k", 8), vocab)
    enc = SparseEncoder(init_encoder(EncoderConfig(d_model=8, n_heads=2, d_ff=8, n_layers=1), c, seed=0), c)
    queries = {"1": "w1 w2", "2": "w3", "3": "w4 w5 w6"}
    rows = expansion_stats(enc, queries)
    for r in rows:
        assert r.term.startswith("latent#")
        assert r.percent == 100.0 * r.count / 3 <= 100.0
    # every nonzero dim of every query is counted
    assert sum(r.count for r in rows) == sum(enc.encode(t).nnz for t in queries.values())
    assert [r.count for r in rows] == sorted((r.count for r in rows), reverse=True)


def test_prune_query_terms():
    q = SparseVector.from_dict({1: 1.0, 2: 2.0})
    assert prune_query_terms(q, {2}) == SparseVector.from_dict({1: 1.0})
    assert prune_query_terms(q, {9}) == q
