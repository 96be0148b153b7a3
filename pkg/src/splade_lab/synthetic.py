"""Seeded synthetic retrieval task whose relevance is defined by lexical overlap.

Documents mix English stopwords, a little punctuation and Zipf-distributed
pseudo-words. Each query takes a few of its target document's rarer words
plus a stopword; every document containing all of a query's content words
is judged relevant.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, Document, write_corpus, write_qrels, write_queries
from .vocab import default_stoplist

_SYLLABLES = [c + v for c in "bdfgklmnprstvz" for v in "aeiou"]


def pseudo_words(n: int) -> list[str]:
    """``n`` distinct alphabetic words of two or three syllables."""
    words = []
    s = len(_SYLLABLES)
    for i in range(n):
        a, rest = i % s, i // s
        b, c = rest % s, rest // s
        w = _SYLLABLES[a] + _SYLLABLES[b]
        if c:
            w += _SYLLABLES[(c - 1) % s]
        words.append(w)
    if len(set(words)) != n:
        raise ValueError(f"cannot generate {n} distinct pseudo-words")
    return words


@dataclass
class ToyTask:
    corpus: Corpus
    train_queries: dict[str, str]
    test_queries: dict[str, str]
    train_qrels: dict[str, dict[str, int]]
    test_qrels: dict[str, dict[str, int]]

    @property
    def qrels(self) -> dict[str, dict[str, int]]:
        return {**self.train_qrels, **self.test_qrels}


def make_toy_task(
    n_docs: int = 2000,
    n_train: int = 500,
    n_test: int = 100,
    n_words: int = 1500,
    doc_len: tuple[int, int] = (10, 20),
    query_words: int = 3,
    stop_fraction: float = 0.3,
    seed: int = 0,
) -> ToyTask:
    if n_train + n_test > n_docs:
        raise ValueError("need at least one distinct target document per query")
    rng = np.random.default_rng(seed)
    words = pseudo_words(n_words)
    stops = default_stoplist()
    zipf = 1.0 / np.arange(1, n_words + 1) ** 1.05
    zipf /= zipf.sum()
    stop_p = 1.0 / np.arange(1, len(stops) + 1) ** 0.5
    stop_p /= stop_p.sum()

    bodies: list[list[str]] = []
    for _ in range(n_docs):
        n = int(rng.integers(doc_len[0], doc_len[1] + 1))
        is_stop = rng.random(n) < stop_fraction
        content = rng.choice(n_words, size=n, p=zipf)
        stop = rng.choice(len(stops), size=n, p=stop_p)
        toks = [stops[s] if f else words[c] for f, c, s in zip(is_stop, content, stop)]
        for i in range(len(toks) - 1):
            r = rng.random()
            if r < 0.06:
                toks[i] += ","
            elif r < 0.1:
                toks[i] += "."
        bodies.append(toks)
    width = len(str(n_docs - 1))
    docs = [Document(f"D{i:0{width}d}", " ".join(b)) for i, b in enumerate(bodies)]
    corpus = Corpus(docs)

    content_sets = [frozenset(t.rstrip(",.") for t in b) - set(stops) for b in bodies]
    df: dict[str, int] = {}
    for s in content_sets:
        for w in s:
            df[w] = df.get(w, 0) + 1

    targets = rng.permutation(n_docs)[: n_train + n_test]
    queries: dict[str, str] = {}
    qrels: dict[str, dict[str, int]] = {}
    qwidth = len(str(n_train + n_test - 1))
    for qi, target in enumerate(targets):
        pool = sorted(content_sets[target])
        weights = np.array([1.0 / df[w] for w in pool])
        k = min(query_words, len(pool))
        picked = [pool[i] for i in rng.choice(len(pool), size=k, replace=False, p=weights / weights.sum())]
        text = picked + [stops[int(rng.choice(len(stops), p=stop_p))]]
        rng.shuffle(text)
        qid = f"Q{qi:0{qwidth}d}"
        queries[qid] = " ".join(text)
        need = set(picked)
        qrels[qid] = {docs[j].doc_id: 1 for j, s in enumerate(content_sets) if need <= s}

    qids = list(queries)
    train_ids, test_ids = qids[:n_train], qids[n_train:]
    return ToyTask(
        corpus,
        {q: queries[q] for q in train_ids},
        {q: queries[q] for q in test_ids},
        {q: qrels[q] for q in train_ids},
        {q: qrels[q] for q in test_ids},
    )


def write_toy_task(task: ToyTask, directory: str | Path) -> dict[str, Path]:
    """Write corpus.tsv, train_queries.tsv, test_queries.tsv and qrels.txt."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": directory / "corpus.tsv",
        "train_queries": directory / "train_queries.tsv",
        "test_queries": directory / "test_queries.tsv",
        "qrels": directory / "qrels.txt",
    }
    write_corpus(task.corpus, paths["corpus"])
    write_queries(task.train_queries, paths["train_queries"])
    write_queries(task.test_queries, paths["test_queries"])
    write_qrels(task.qrels, paths["qrels"])
    return paths
