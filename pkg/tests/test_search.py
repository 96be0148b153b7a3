import math

import numpy as np
import pytest

from oracles import brute_force_topk, textbook_bm25
from splade_lab.corpus import normalize, train_tokenizer
from splade_lab.encoder import SparseVector
from splade_lab.index import build_bm25_stats, build_index_from_vectors
from splade_lab.kernels import available_backends
from splade_lab.search import (
    Ranking,
    SearchError,
    read_run,
    search_bm25,
    search_dense_bruteforce,
    search_exhaustive,
    search_maxscore,
    write_run,
)

sv = SparseVector.from_dict
BACKENDS = available_backends()


def random_instance(rng, n_docs, dim, doc_nnz=6, q_nnz=4, levels=None):
    doc_ids = [f"d{i:05d}" for i in rng.permutation(n_docs)]
    vecs = []
    for _ in range(n_docs):
        terms = rng.choice(dim, size=int(rng.integers(0, doc_nnz + 1)), replace=False)
        if levels is not None:
            # coarse weights produce many exact score ties
            w = rng.integers(1, levels + 1, size=len(terms)) / levels
        else:
            w = rng.random(len(terms)) + 1e-3
        vecs.append(sv(dict(zip(terms.tolist(), w.tolist()))))
    if not any(v.nnz for v in vecs):
        vecs[0] = sv({0: 1.0})
    index = build_index_from_vectors(doc_ids, vecs, dim)
    qterms = rng.choice(dim, size=int(rng.integers(1, q_nnz + 1)), replace=False)
    qw = rng.integers(1, 4, size=len(qterms)) / 2 if levels is not None else rng.random(len(qterms)) + 1e-3
    return index, sv(dict(zip(qterms.tolist(), qw.tolist())))


def oracle(index, q, k):
    levels_by_doc = [dict() for _ in index.doc_ids]
    for t, pl in index.lists.items():
        for o, lv in zip(pl.ordinals.tolist(), pl.levels.tolist()):
            levels_by_doc[o][t] = lv
    return brute_force_topk(index.doc_ids, levels_by_doc, index.quant_scale, q.entries, k)


def test_three_doc_hand_example():
    # d2 ties d3; tie goes to the smaller doc_id
    vecs = [sv({0: 1.0}), sv({0: 0.5, 1: 1.0}), sv({1: 1.0, 0: 0.5})]
    index = build_index_from_vectors(["d1", "d2", "d3"], vecs, 2)
    q = sv({0: 2.0, 1: 1.0})
    for backend in BACKENDS:
        r = search_exhaustive(index, q, 10, "q", backend)
        assert r.doc_ids() == ["d2", "d3", "d1"]
        assert r.hits[0][1] == pytest.approx(2.0, abs=2 * index.quant_scale)
        assert search_maxscore(index, q, 10, "q", backend).hits == r.hits


def test_empty_query_and_bad_k():
    index = build_index_from_vectors(["a"], [sv({0: 1.0})], 3)
    assert search_exhaustive(index, sv({}), 5).hits == []
    with pytest.raises(SearchError):
        search_maxscore(index, sv({0: 1.0}), 0)
    with pytest.raises(SearchError):
        search_exhaustive(index, sv({7: 1.0}), 5)


@pytest.mark.parametrize("backend", BACKENDS)
def test_oracle_equivalence_random(backend):
    rng = np.random.default_rng(11)
    for trial in range(150):
        levels = 3 if trial % 2 else None
        index, q = random_instance(rng, int(rng.integers(1, 120)), 25, levels=levels)
        k = int(rng.integers(1, 15))
        expected = oracle(index, q, k)
        ex = search_exhaustive(index, q, k, backend=backend)
        ms = search_maxscore(index, q, k, backend=backend)
        assert ex.hits == expected
        assert ms.hits == expected


def test_backends_agree():
    rng = np.random.default_rng(5)
    for _ in range(50):
        index, q = random_instance(rng, 300, 40, levels=4)
        results = {b: search_maxscore(index, q, 10, backend=b).hits for b in BACKENDS}
        assert len({repr(v) for v in results.values()}) == 1


def test_single_term_maxscore_is_list_topk():
    rng = np.random.default_rng(2)
    index, _ = random_instance(rng, 200, 5, doc_nnz=3)
    t = max(index.lists, key=lambda t: len(index.lists[t]))
    pl = index.lists[t]
    order = sorted(range(len(pl)), key=lambda i: (-int(pl.levels[i]), int(pl.ordinals[i])))[:7]
    got = search_maxscore(index, sv({t: 1.0}), 7).doc_ids()
    assert got == [index.doc_ids[int(pl.ordinals[i])] for i in order]


def test_dominant_term_adversarial():
    # term 0 carries huge impacts on a few docs; term 1 is a long list of tiny impacts
    n = 400
    vecs = [sv({1: 0.01 + i * 1e-5}) for i in range(n)]
    for i in range(0, n, 50):
        vecs[i] = sv({0: 5.0, 1: 0.01})
    ids = [f"d{i:04d}" for i in range(n)]
    index = build_index_from_vectors(ids, vecs, 2)
    q = sv({0: 1.0, 1: 1.0})
    for backend in BACKENDS:
        r = search_maxscore(index, q, 5, backend=backend)
        assert r.hits == oracle(index, q, 5) == search_exhaustive(index, q, 5, backend=backend).hits


def test_bm25_against_textbook():
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(40)]
    texts = [" ".join(rng.choice(words, size=int(rng.integers(1, 25)))) for _ in range(100)]
    vocab = train_tokenizer(texts, 1000)
    stats = build_bm25_stats(texts, vocab)
    tokens = [normalize(t) for t in texts]
    for _ in range(20):
        query = " ".join(rng.choice(words + ["unseen"], size=3))
        expected = textbook_bm25(tokens, normalize(query))
        r = search_bm25(stats, query, k=100)
        by_id = dict(r.hits)
        for doc_id, s in zip(stats.doc_ids, [expected[int(d[1:])] for d in stats.doc_ids]):
            if s > 0:
                assert abs(by_id[doc_id] - s) <= 1e-9
            else:
                assert doc_id not in by_id


def test_bm25_hand_example():
    texts = ["a a b", "a c", "c c c c"]
    vocab = train_tokenizer(texts, 10)
    stats = build_bm25_stats(texts, vocab)
    r = search_bm25(stats, "a", 10)
    # a in 2 of 3 docs: idf = ln(1 + 1.5/2.5)
    idf = math.log(1 + 1.5 / 2.5)
    avg = 9 / 3
    d0 = idf * 2 * 1.82 / (2 + 0.82 * (1 - 0.68 + 0.68 * 3 / avg))
    d1 = idf * 1 * 1.82 / (1 + 0.82 * (1 - 0.68 + 0.68 * 2 / avg))
    assert r.doc_ids() == ["d0", "d1"]
    assert r.hits[0][1] == pytest.approx(d0, abs=1e-12)
    assert r.hits[1][1] == pytest.approx(d1, abs=1e-12)
    assert search_bm25(stats, "zzz", 10).hits == []
    wide = search_bm25(stats, "a c", 10, k1=1.64)
    assert [s for _, s in wide.hits] == sorted((s for _, s in wide.hits), reverse=True)


def test_dense_examples():
    M = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    r = search_dense_bruteforce(M, ["a", "b", "c"], np.array([1.0, 1.0]), 3)
    assert r.hits == [("b", 2.0), ("c", 2.0), ("a", 1.0)]
    zero = search_dense_bruteforce(M, ["z", "b", "a"], np.zeros(2), 2)
    assert zero.doc_ids() == ["a", "b"]
    with pytest.raises(SearchError):
        search_dense_bruteforce(M, ["a", "b", "c"], np.zeros(3), 2)


def test_dense_against_double_loop():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(500, 8))
    ids = [f"d{i:03d}" for i in range(500)]
    q = rng.normal(size=8)
    expected = []
    for i in range(500):
        s = 0.0
        for j in range(8):
            s += M[i, j] * q[j]
        expected.append((-s, ids[i]))
    expected.sort()
    got = search_dense_bruteforce(M, ids, q, 20)
    assert got.doc_ids() == [d for _, d in expected[:20]]
    np.testing.assert_allclose([s for _, s in got.hits], [-s for s, _ in expected[:20]], rtol=1e-12)


def test_run_round_trip(tmp_path):
    rankings = [Ranking("q1", [("d2", 3.5), ("d1", 1 / 3)], 10), Ranking("q2", [("d9", 0.25)], 10)]
    write_run(rankings, "tag", tmp_path / "r.trec")
    lines = (tmp_path / "r.trec").read_text().splitlines()
    assert lines[0] == "q1 Q0 d2 1 3.5 tag"
    assert lines[1].split()[3] == "2"
    back = read_run(tmp_path / "r.trec")
    assert back["q1"].hits == rankings[0].hits and back["q2"].hits == rankings[1].hits
    with pytest.raises(SearchError):
        write_run([], "t", tmp_path / "empty.trec")
