"""Top-k retrieval over the impact index, BM25 and dense baselines, and TREC run files.

Every ranking is totally ordered: descending score, then ascending doc_id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .encoder import SparseVector
from .index import Bm25Stats, InvertedIndex
from .kernels import get_backend

BM25_K1 = 0.82
BM25_B = 0.68
DEFAULT_K = 1000


class SearchError(ValueError):
    pass


@dataclass
class Ranking:
    query_id: str
    hits: list[tuple[str, float]] = field(default_factory=list)
    k: int = DEFAULT_K

    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.hits]

    def __len__(self) -> int:
        return len(self.hits)


def _check_k(k: int) -> None:
    if k <= 0:
        raise SearchError(f"k must be positive, got {k}")


def _query_arrays(index: InvertedIndex, q: SparseVector):
    """Postings of the query's indexed terms, concatenated in ascending term id."""
    if q.nnz and int(q.terms.max()) >= index.output_dim:
        raise SearchError(f"query term {int(q.terms.max())} outside the index's output dimensions")
    terms = [t for t in q.terms.tolist() if t in index.lists]
    weights = dict(zip(q.terms.tolist(), q.weights.tolist()))
    lists = [index.lists[t] for t in terms]
    offsets = np.zeros(len(lists) + 1, dtype=np.int64)
    if lists:
        offsets[1:] = np.cumsum([len(pl) for pl in lists])
        docs = np.concatenate([pl.ordinals for pl in lists]).astype(np.int32)
        levels = np.concatenate([pl.levels for pl in lists]).astype(np.uint8)
    else:
        docs = np.zeros(0, dtype=np.int32)
        levels = np.zeros(0, dtype=np.uint8)
    qw = np.array([weights[t] for t in terms], dtype=np.float64)
    max_levels = np.array([pl.max_level for pl in lists], dtype=np.int32)
    return offsets, docs, levels, qw, max_levels


def _to_ranking(index: InvertedIndex, query_id: str, ords: np.ndarray, scores: np.ndarray, k: int) -> Ranking:
    return Ranking(query_id, [(index.doc_ids[o], s) for o, s in zip(ords.tolist(), scores.tolist())], k)


def search_exhaustive(
    index: InvertedIndex, q: SparseVector, k: int = DEFAULT_K, query_id: str = "", backend: str | None = None
) -> Ranking:
    """Exact top-k by ``sum_j q_j * dequantized impact``, document at a time."""
    _check_k(k)
    offsets, docs, levels, qw, _ = _query_arrays(index, q)
    if not len(qw):
        return Ranking(query_id, [], k)
    ords, scores = get_backend(backend).daat_exhaustive(offsets, docs, levels, qw, index.quant_scale, k)
    return _to_ranking(index, query_id, ords, scores, k)


def search_maxscore(
    index: InvertedIndex, q: SparseVector, k: int = DEFAULT_K, query_id: str = "", backend: str | None = None
) -> Ranking:
    """MaxScore-pruned top-k; returns exactly what :func:`search_exhaustive` returns."""
    _check_k(k)
    offsets, docs, levels, qw, max_levels = _query_arrays(index, q)
    if not len(qw):
        return Ranking(query_id, [], k)
    ords, scores = get_backend(backend).daat_maxscore(offsets, docs, levels, qw, max_levels, index.quant_scale, k)
    return _to_ranking(index, query_id, ords, scores, k)


def search_sparse(index: InvertedIndex, q: SparseVector, k: int = DEFAULT_K, query_id: str = "",
                  strategy: str = "maxscore") -> Ranking:
    if strategy == "maxscore":
        return search_maxscore(index, q, k, query_id)
    if strategy == "exhaustive":
        return search_exhaustive(index, q, k, query_id)
    raise SearchError(f"unknown search strategy {strategy!r}")


def bm25_idf(n_docs: int, df: int) -> float:
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


def search_bm25(
    stats: Bm25Stats,
    query: str | Sequence[int],
    k: int = DEFAULT_K,
    k1: float = BM25_K1,
    b: float = BM25_B,
    query_id: str = "",
) -> Ranking:
    """Okapi BM25 with the always-positive idf ``ln(1 + (N - df + 0.5) / (df + 0.5))``.

    ``query`` is raw text or a sequence of base-vocabulary term ids; each
    distinct term contributes once.
    """
    _check_k(k)
    terms = stats.query_terms(query) if isinstance(query, str) else list(dict.fromkeys(query))
    n = stats.doc_count
    avgdl = stats.avg_doc_length
    norm = k1 * (1.0 - b + b * (stats.doc_lengths / avgdl)) if avgdl > 0 else np.full(n, k1)
    scores = np.zeros(n)
    matched = np.zeros(n, dtype=bool)
    for t in sorted(terms):
        if t not in stats.postings:
            continue
        ords, tfs = stats.postings[t]
        idf = bm25_idf(n, int(stats.df[t]))
        tf = tfs.astype(np.float64)
        scores[ords] += idf * tf * (k1 + 1.0) / (tf + norm[ords])
        matched[ords] = True
    cand = np.flatnonzero(matched)
    return _top_k(query_id, stats.doc_ids, cand, scores[cand], k)


def _top_k(query_id: str, doc_ids: Sequence[str], cand: np.ndarray, scores: np.ndarray, k: int) -> Ranking:
    """Rank candidates (ordinals into ascending-sorted ``doc_ids``) by score then doc_id."""
    order = np.lexsort((cand, -scores))[:k]
    return Ranking(query_id, [(doc_ids[cand[i]], float(scores[i])) for i in order], k)


def search_dense_bruteforce(
    doc_matrix: np.ndarray, doc_ids: Sequence[str], q: np.ndarray, k: int = DEFAULT_K, query_id: str = ""
) -> Ranking:
    """Exact inner-product top-k over every document row."""
    _check_k(k)
    doc_matrix = np.asarray(doc_matrix, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if doc_matrix.ndim != 2 or doc_matrix.shape[0] != len(doc_ids):
        raise SearchError("doc_matrix must have one row per doc_id")
    if q.shape != (doc_matrix.shape[1],):
        raise SearchError(f"query dimension {q.shape} does not match documents ({doc_matrix.shape[1]})")
    scores = doc_matrix @ q
    id_rank = np.argsort(np.asarray(doc_ids, dtype=object), kind="stable")
    ordinal = np.empty(len(doc_ids), dtype=np.int64)
    ordinal[id_rank] = np.arange(len(doc_ids))
    order = np.lexsort((ordinal, -scores))[:k]
    return Ranking(query_id, [(doc_ids[i], float(scores[i])) for i in order], k)


# -- run files ------------------------------------------------------------------------


def format_run(rankings: Iterable[Ranking], tag: str) -> str:
    lines = []
    for r in rankings:
        for rank, (doc_id, s) in enumerate(r.hits, start=1):
            lines.append(f"{r.query_id} Q0 {doc_id} {rank} {s!r} {tag}\n")
    return "".join(lines)


def write_run(rankings: Sequence[Ranking], tag: str, path: str | Path) -> None:
    """TREC format ``qid Q0 docid rank score tag``; scores are written round-trip exact."""
    if not rankings:
        raise SearchError("no rankings to write")
    Path(path).write_text(format_run(rankings, tag), encoding="utf-8")


def read_run(path: str | Path) -> dict[str, Ranking]:
    """Parse a TREC run; hits are re-sorted into the canonical order."""
    runs: dict[str, list[tuple[str, float]]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise SearchError(f"{path}:{lineno}: expected 6 fields in a TREC run line")
            qid, _, doc_id, _, s, _ = parts
            runs.setdefault(qid, []).append((doc_id, float(s)))
    out = {}
    for qid, hits in runs.items():
        hits.sort(key=lambda h: (-h[1], h[0]))
        out[qid] = Ranking(qid, hits, max(len(hits), 1))
    return out


def rankings_by_query(rankings: Iterable[Ranking]) -> dict[str, Ranking]:
    return {r.query_id: r for r in rankings}


def batch_search(
    index: InvertedIndex, queries: Mapping[str, SparseVector], k: int = DEFAULT_K, strategy: str = "maxscore"
) -> list[Ranking]:
    return [search_sparse(index, q, k, qid, strategy) for qid, q in queries.items()]
