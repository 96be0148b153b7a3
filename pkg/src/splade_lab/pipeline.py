"""Stage functions behind the command line: ingest, vocab, train, index, search, eval, analyze, matrix.

Layout under the work directory::

    shared/      vocab.txt, frequencies.tsv, triples.tsv
    systems/<name>/
                 controller.txt, params.bin, train.log, index.bin, index_stats.tsv, run.trec
    eval/        report.tsv, report.per_query.tsv, report.significance.tsv
    analyze/<name>/
                 expansion.tsv, pruning.tsv, run.pruned.trec
    manifest.json

Explicitly requested stages always recompute; missing prerequisites are built on demand.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy
import torch

from . import __version__
from .config import ExperimentConfig
from .corpus import (
    BaseVocabulary,
    Corpus,
    FrequencyTable,
    load_corpus,
    load_qrels,
    load_queries,
    token_frequencies,
    train_tokenizer,
)
from .encoder import SparseEncoder, encode_dense_many, load_params, save_params
from .evaluate import EvalReport, evaluate_rankings, expansion_stats, prune_query_terms, write_expansion_stats
from .index import InvertedIndex, build_bm25_stats, build_index, index_stats, write_index_stats
from .kernels import BACKEND
from .search import Ranking, read_run, search_bm25, search_dense_bruteforce, search_sparse, write_run
from .train import TrainingTriple, mine_hard_negatives, read_triples, train, write_triples
from .vocab import ControllerSpec, VocabularyController, build_controller, load_stoplist

log = logging.getLogger(__name__)

BM25 = "bm25"
DENSE = "dense"


class PipelineError(RuntimeError):
    pass


def system_slug(system: str) -> str:
    return system.replace(":", "_")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict[str, str]:
    return {
        "splade_lab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
        "kernel_backend": BACKEND,
    }


@dataclass
class Workspace:
    cfg: ExperimentConfig

    def __post_init__(self):
        torch.set_num_threads(self.cfg.threads)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def root(self) -> Path:
        return self.cfg.workdir

    @property
    def shared(self) -> Path:
        p = self.root / "shared"
        p.mkdir(parents=True, exist_ok=True)
        return p

    def system_dir(self, system: str) -> Path:
        p = self.root / "systems" / system_slug(system)
        p.mkdir(parents=True, exist_ok=True)
        return p

    # -- inputs ------------------------------------------------------------------------

    @cached_property
    def corpus(self) -> Corpus:
        return load_corpus(self.cfg.corpus, self.cfg.corpus_format, self.cfg.title_augment)

    @cached_property
    def train_queries(self) -> dict[str, str]:
        return load_queries(self.cfg.train_queries)

    @cached_property
    def eval_queries(self) -> dict[str, str]:
        return load_queries(self.cfg.eval_queries)

    @cached_property
    def qrels(self) -> dict[str, dict[str, int]]:
        return load_qrels(self.cfg.qrels)

    @property
    def eval_qrels(self) -> dict[str, dict[str, int]]:
        return {q: self.qrels[q] for q in self.eval_queries if q in self.qrels}

    @cached_property
    def stoplist(self) -> list[str] | None:
        return load_stoplist(self.cfg.stoplist) if self.cfg.stoplist else None

    # -- shared artifacts ---------------------------------------------------------------

    @property
    def vocab(self) -> BaseVocabulary:
        path = self.shared / "vocab.txt"
        if not path.exists():
            self.ingest()
        return BaseVocabulary.load(path)

    @cached_property
    def frequencies(self) -> FrequencyTable:
        return token_frequencies(self.corpus, self.vocab)

    @cached_property
    def bm25(self):
        return build_bm25_stats(self.corpus, self.vocab)

    @property
    def triples(self) -> list[TrainingTriple]:
        path = self.shared / "triples.tsv"
        if not path.exists():
            self.ingest()
        return read_triples(path)

    def ingest(self) -> list[Path]:
        """Validate inputs, train the tokenizer, count tokens, mine BM25 hard negatives."""
        corpus = self.corpus
        unknown = [q for q in self.eval_queries if q not in self.qrels]
        if unknown:
            log.warning("%d evaluation queries have no judgments", len(unknown))
        vocab = train_tokenizer(corpus, self.cfg.max_vocab, self.cfg.min_freq)
        vocab_path = self.shared / "vocab.txt"
        vocab.save(vocab_path)
        self.__dict__.pop("frequencies", None)
        self.__dict__.pop("bm25", None)
        freq = self.frequencies
        freq_path = self.shared / "frequencies.tsv"
        with freq_path.open("w", encoding="utf-8") as fh:
            fh.write(f"#total_tokens\t{freq.total_tokens}\n")
            for i, tok in enumerate(vocab.tokens):
                if not vocab.is_special(i):
                    fh.write(f"{tok}\t{int(freq.counts[i])}\n")
        t = self.cfg.train
        triples = mine_hard_negatives(
            self.bm25, self.train_queries, self.qrels, t.depth, t.n_hard, self.cfg.seed, self.cfg.rel_threshold
        )
        triples_path = self.shared / "triples.tsv"
        write_triples(triples, triples_path)
        log.info("ingest: %d docs, vocab %d, %d triples", len(corpus), len(vocab), len(triples))
        self.write_manifest()
        return [vocab_path, freq_path, triples_path]

    # -- per-system stages --------------------------------------------------------------

    def spec(self, system: str) -> ControllerSpec:
        return ControllerSpec.parse(system, seed=self.cfg.seed)

    def build_vocab(self, system: str) -> Path:
        if system in (BM25, DENSE):
            raise PipelineError(f"{system} has no vocabulary controller")
        ctrl = build_controller(self.spec(system), self.vocab, self.frequencies, self.stoplist)
        path = self.system_dir(system) / "controller.txt"
        ctrl.save(path)
        log.info("vocab %s: %d allowed dims, output_dim %d", system, len(ctrl.allowed), ctrl.output_dim)
        self.write_manifest()
        return path

    def controller(self, system: str) -> VocabularyController:
        path = self.system_dir(system) / "controller.txt"
        if not path.exists():
            self.build_vocab(system)
        return VocabularyController.load(path, self.vocab)

    def train(self, system: str) -> Path:
        if system == BM25:
            raise PipelineError("bm25 is not trained")
        ctrl = None if system == DENSE else self.controller(system)
        params, tlog = train(
            self.cfg.train, self.corpus, self.train_queries, self.triples, ctrl, self.cfg.encoder, vocab=self.vocab
        )
        d = self.system_dir(system)
        save_params(params, d / "params.bin", meta={"system": system, "seed": self.cfg.seed})
        tlog.write(d / "train.log")
        log.info("train %s: %d steps", system, len(tlog))
        self.write_manifest()
        return d / "params.bin"

    def params(self, system: str):
        path = self.system_dir(system) / "params.bin"
        if not path.exists():
            self.train(system)
        return load_params(path)[0]

    def encoder(self, system: str) -> SparseEncoder:
        return SparseEncoder(self.params(system), self.controller(system))

    def index(self, system: str) -> Path:
        if system in (BM25, DENSE):
            raise PipelineError(f"{system} does not use the impact index")
        ctrl = self.controller(system)
        idx = build_index(self.params(system), ctrl, self.corpus)
        d = self.system_dir(system)
        idx.save(d / "index.bin")
        stats, totals = index_stats(idx, ctrl)
        write_index_stats(stats, d / "index_stats.tsv")
        log.info("index %s: %d postings in %d lists", system, totals["postings"], len(idx.lists))
        self.write_manifest()
        return d / "index.bin"

    def load_index(self, system: str) -> InvertedIndex:
        path = self.system_dir(system) / "index.bin"
        if not path.exists():
            self.index(system)
        return InvertedIndex.load(path)

    def search(self, system: str) -> Path:
        queries = self.eval_queries
        k = self.cfg.k
        if system == BM25:
            rankings = [search_bm25(self.bm25, text, k, query_id=qid) for qid, text in queries.items()]
        elif system == DENSE:
            params = self.params(system)
            doc_matrix = encode_dense_many(params, self.vocab, self.corpus.texts())
            q_matrix = encode_dense_many(params, self.vocab, list(queries.values()))
            rankings = [
                search_dense_bruteforce(doc_matrix, self.corpus.doc_ids, q_matrix[i], k, query_id=qid)
                for i, qid in enumerate(queries)
            ]
        else:
            idx = self.load_index(system)
            enc = self.encoder(system)
            vecs = enc.encode_many(list(queries.values()))
            rankings = [search_sparse(idx, v, k, qid, self.cfg.strategy) for qid, v in zip(queries, vecs)]
        path = self.system_dir(system) / "run.trec"
        write_run(rankings, system_slug(system), path)
        self.write_manifest()
        return path

    def run_file(self, system: str) -> Path:
        path = self.system_dir(system) / "run.trec"
        if not path.exists():
            self.search(system)
        return path

    def evaluate(self, systems: Sequence[str], prefix: str = "report") -> EvalReport:
        runs = {s: read_run(self.run_file(s)) for s in systems}
        report = evaluate_rankings(runs, self.eval_qrels, self.cfg.metrics, self.cfg.rel_threshold)
        report.write(self.root / "eval", prefix)
        self.write_manifest()
        return report

    def analyze(self, system: str | None = None) -> dict[str, float]:
        """Expansion statistics, then query-time pruning of the most expanded terms."""
        system = system or self.cfg.analyze_system
        if system in (BM25, DENSE):
            raise PipelineError("analyze needs a sparse system")
        enc = self.encoder(system)
        idx = self.load_index(system)
        queries = self.eval_queries
        rows = expansion_stats(enc, queries, idx)
        out = self.root / "analyze" / system_slug(system)
        out.mkdir(parents=True, exist_ok=True)
        write_expansion_stats(rows, out / "expansion.tsv")
        banned = {r.term_id for r in rows[: self.cfg.prune_top]}

        vecs = enc.encode_many(list(queries.values()))
        pruned = [prune_query_terms(v, banned) for v in vecs]
        leaked = sum(len(banned.intersection(p.terms.tolist())) for p in pruned)
        if leaked:
            raise PipelineError(f"pruned queries still carry {leaked} banned terms")
        k = self.cfg.k
        original = [search_sparse(idx, v, k, qid, self.cfg.strategy) for qid, v in zip(queries, vecs)]
        trimmed = [search_sparse(idx, v, k, qid, self.cfg.strategy) for qid, v in zip(queries, pruned)]
        write_run(trimmed, system_slug(system) + "-pruned", out / "run.pruned.trec")
        report = evaluate_rankings(
            {"original": {r.query_id: r for r in original}, "pruned": {r.query_id: r for r in trimmed}},
            self.eval_qrels,
            self.cfg.metrics,
            self.cfg.rel_threshold,
        )
        result = {"banned_terms": float(len(banned)), "banned_in_pruned_queries": float(leaked)}
        with (out / "pruning.tsv").open("w", encoding="utf-8") as fh:
            fh.write("metric\toriginal\tpruned\tdelta\tp_value\n")
            for m in self.cfg.metrics:
                a, b = report.means["original"][m], report.means["pruned"][m]
                p = report.pvalues[m][("original", "pruned")]
                fh.write(f"{m}\t{a:.6f}\t{b:.6f}\t{b - a:+.6f}\t{p:.6g}\n")
                result[f"{m}.original"], result[f"{m}.pruned"], result[f"{m}.delta"] = a, b, b - a
            fh.write(f"#banned_terms\t{len(banned)}\n#banned_in_pruned_queries\t{leaked}\n")
        self.write_manifest()
        return result

    def run_system(self, system: str) -> Path:
        """Every stage for one system, recomputing each."""
        if system not in (BM25, DENSE):
            self.build_vocab(system)
            self.train(system)
            self.index(system)
        elif system == DENSE:
            self.train(system)
        return self.search(system)

    def matrix(self, systems: Sequence[str] | None = None) -> EvalReport:
        systems = list(systems or self.cfg.systems)
        self.ingest()
        for s in systems:
            log.info("matrix: %s", s)
            self.run_system(s)
        return self.evaluate(systems, prefix="matrix")

    # -- manifest -------------------------------------------------------------------------

    def write_manifest(self) -> Path:
        path = self.root / "manifest.json"
        files = {
            p.relative_to(self.root).as_posix(): sha256_file(p)
            for p in sorted(self.root.rglob("*"))
            if p.is_file() and p != path
        }
        manifest = {
            "config_sha256": self.cfg.digest(),
            "seed": self.cfg.seed,
            "versions": versions(),
            "inputs": {
                name: sha256_file(getattr(self.cfg, name))
                for name in ("corpus", "train_queries", "eval_queries", "qrels")
            },
            "files": files,
        }
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path
