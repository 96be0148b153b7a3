"""Compare the compiled and pure-Python top-k kernels on a random impact index.

    python3 benchmarks/bench_kernels.py --docs 20000 --queries 50

Term frequencies follow a Zipf law so a few postings lists are long, as in a
learned sparse index. Both backends must return identical rankings; the script
exits non-zero if they do not.
"""

import argparse
import sys
import time

import numpy as np

from splade_lab.encoder import SparseVector
from splade_lab.index import build_index_from_vectors
from splade_lab.kernels import available_backends
from splade_lab.search import search_exhaustive, search_maxscore


def make_index(n_docs: int, dim: int, doc_nnz: int, seed: int):
    rng = np.random.default_rng(seed)
    p = 1.0 / np.arange(1, dim + 1)
    p /= p.sum()
    vecs = []
    for _ in range(n_docs):
        terms = np.unique(rng.choice(dim, size=doc_nnz, p=p))
        vecs.append(SparseVector.from_dict(dict(zip(terms.tolist(), (rng.random(len(terms)) * 2 + 0.01).tolist()))))
    return build_index_from_vectors([f"d{i:07d}" for i in range(n_docs)], vecs, dim), rng


def make_queries(rng, n: int, dim: int, q_nnz: int):
    out = []
    for _ in range(n):
        # mix frequent and rare terms
        terms = np.unique(np.concatenate([rng.integers(0, 50, q_nnz // 2), rng.integers(0, dim, q_nnz - q_nnz // 2)]))
        out.append(SparseVector.from_dict(dict(zip(terms.tolist(), (rng.random(len(terms)) + 0.1).tolist()))))
    return out


def time_backend(fn, index, queries, k, backend, repeat):
    best = float("inf")
    results = None
    for _ in range(repeat):
        start = time.perf_counter()
        results = [fn(index, q, k, backend=backend).hits for q in queries]
        best = min(best, time.perf_counter() - start)
    return best / len(queries), results


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--docs", type=int, default=20_000)
    ap.add_argument("--dim", type=int, default=5_000)
    ap.add_argument("--doc-nnz", type=int, default=60)
    ap.add_argument("--queries", type=int, default=50)
    ap.add_argument("--query-nnz", type=int, default=16)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    index, rng = make_index(args.docs, args.dim, args.doc_nnz, args.seed)
    queries = make_queries(rng, args.queries, args.dim, args.query_nnz)
    print(f"index: {args.docs} docs, {index.total_postings} postings; {args.queries} queries, k={args.k}")
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the pure-Python kernels only")

    ok = True
    print(f"{'strategy':<12}{'backend':<10}{'ms/query':>12}{'speedup':>10}")
    for name, fn in (("exhaustive", search_exhaustive), ("maxscore", search_maxscore)):
        timings = {}
        outputs = {}
        for b in backends:
            timings[b], outputs[b] = time_backend(fn, index, queries, args.k, b, args.repeat)
        for b in backends:
            speedup = timings["python"] / timings[b]
            print(f"{name:<12}{b:<10}{timings[b] * 1e3:>12.3f}{speedup:>9.1f}x")
        if len({repr(o) for o in outputs.values()}) != 1:
            print(f"  {name}: backends disagree", file=sys.stderr)
            ok = False
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
