"""Contrastive + FLOPS training for the sparse encoder and the dense baseline."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch.nn import functional as F

from .corpus import BaseVocabulary, Corpus, TokenSequence, tokenize
from .encoder import (
    Encoder,
    EncoderConfig,
    dense_rep_batch,
    init_encoder,
    sparse_rep_batch,
)
from .index import Bm25Stats
from .search import search_bm25
from .vocab import VocabularyController

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingTriple:
    query_id: str
    positive_doc_id: str
    hard_negative_doc_ids: tuple[str, ...]

    def __post_init__(self):
        if self.positive_doc_id in self.hard_negative_doc_ids:
            raise TrainingError(f"positive {self.positive_doc_id} listed as a hard negative for {self.query_id}")


@dataclass
class TrainConfig:
    batch_size: int = 8
    n_hard: int = 7
    learning_rate: float = 1e-2
    momentum: float = 0.0
    epochs: int = 1
    max_steps: int | None = None
    lambda_q: float = 1e-2
    lambda_d: float = 1e-2
    warmup_steps: int = 100
    depth: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.batch_size <= 0 or self.n_hard < 0 or self.depth <= 0:
            raise TrainingError("batch_size and depth must be positive, n_hard nonnegative")
        if self.learning_rate <= 0 or self.epochs < 0 or self.warmup_steps < 0:
            raise TrainingError("learning_rate must be positive; epochs and warmup_steps nonnegative")
        if self.lambda_q < 0 or self.lambda_d < 0:
            raise TrainingError("FLOPS weights must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise TrainingError("momentum must lie in [0, 1)")

    @property
    def candidates_per_query(self) -> int:
        """Documents each query is scored against: 1 positive + in-batch negatives."""
        return self.batch_size * (1 + self.n_hard)

    @property
    def negatives_per_query(self) -> int:
        return self.candidates_per_query - 1


# -- negative mining -----------------------------------------------------------------


def relevant_docs(judged: Mapping[str, int], threshold: int = 1) -> list[str]:
    return sorted(d for d, g in judged.items() if g >= threshold)


def mine_hard_negatives(
    bm25: Bm25Stats,
    queries: Mapping[str, str],
    qrels: Mapping[str, Mapping[str, int]],
    depth: int = 200,
    n_hard: int = 7,
    seed: int = 0,
    rel_threshold: int = 1,
) -> list[TrainingTriple]:
    """BM25 top-``depth`` minus judged positives, ``n_hard`` sampled per query.

    Queries with fewer than ``n_hard`` candidates are skipped and logged.
    """
    judged_queries = [qid for qid in queries if relevant_docs(qrels.get(qid, {}), rel_threshold)]
    if not judged_queries:
        raise TrainingError("no query has a relevant document in the qrels")
    rng = np.random.default_rng(seed)
    triples = []
    for qid in judged_queries:
        positives = relevant_docs(qrels[qid], rel_threshold)
        judged_pos = set(positives)
        ranking = search_bm25(bm25, queries[qid], k=depth, query_id=qid)
        candidates = [d for d in ranking.doc_ids() if d not in judged_pos]
        if len(candidates) < n_hard:
            log.info("skipping query %s: %d hard-negative candidates < %d", qid, len(candidates), n_hard)
            continue
        pos = positives[int(rng.integers(len(positives)))]
        picks = rng.choice(len(candidates), size=n_hard, replace=False)
        triples.append(TrainingTriple(qid, pos, tuple(candidates[i] for i in picks)))
    return triples


def write_triples(triples: Sequence[TrainingTriple], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(f"{t.query_id}\t{t.positive_doc_id}\t{','.join(t.hard_negative_doc_ids)}\n")


def read_triples(path: str | Path) -> list[TrainingTriple]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            qid, pos, negs = line.split("\t")
            out.append(TrainingTriple(qid, pos, tuple(n for n in negs.split(",") if n)))
    return out


# -- batches and losses -------------------------------------------------------------


@dataclass
class Batch:
    """Queries plus their documents flattened as ``[pos, neg_1..neg_h]`` per query."""

    queries: list[TokenSequence]
    docs: list[TokenSequence]
    batch_size: int
    n_hard: int

    def __post_init__(self):
        if len(self.queries) != self.batch_size or len(self.docs) != self.batch_size * (1 + self.n_hard):
            raise TrainingError("batch layout does not match (batch_size, 1 + n_hard)")

    @property
    def group_size(self) -> int:
        return 1 + self.n_hard

    def positive_index(self) -> torch.Tensor:
        return torch.arange(self.batch_size) * self.group_size


def make_batch(
    triples: Sequence[TrainingTriple],
    queries: Mapping[str, str],
    corpus: Corpus,
    vocab: BaseVocabulary,
    max_len: int,
) -> Batch:
    n_hard = len(triples[0].hard_negative_doc_ids)
    qs, ds = [], []
    for t in triples:
        if len(t.hard_negative_doc_ids) != n_hard:
            raise TrainingError("all triples in a batch need the same number of negatives")
        qs.append(tokenize(queries[t.query_id], vocab, max_len))
        for d in (t.positive_doc_id, *t.hard_negative_doc_ids):
            ds.append(tokenize(corpus.visible_text(d), vocab, max_len))
    return Batch(qs, ds, len(triples), n_hard)


def contrastive_loss(scores: torch.Tensor, positive_index: torch.Tensor) -> torch.Tensor:
    """Mean of ``-log softmax(scores)[row, positive]`` over rows.

    Each row spans every document in the batch, so other queries' documents act
    as in-batch negatives.
    """
    return F.cross_entropy(scores, positive_index)


def flops_loss(reps: torch.Tensor | np.ndarray) -> torch.Tensor | float:
    """``sum_j (mean_b w_bj)^2`` over the columns of ``reps`` (batch x dims)."""
    if isinstance(reps, torch.Tensor):
        return (reps.mean(dim=0) ** 2).sum()
    reps = np.asarray(reps, dtype=np.float64)
    if reps.size == 0:
        return 0.0
    return float((reps.mean(axis=0) ** 2).sum())


def lambda_at(lam: float, step: int, warmup_steps: int) -> float:
    """Quadratic ramp from 0 at step 0 to ``lam`` at ``warmup_steps``."""
    if warmup_steps <= 0 or step >= warmup_steps:
        return lam
    return lam * (step / warmup_steps) ** 2


@dataclass(frozen=True)
class StepReport:
    step: int
    contrastive: float
    flops_q: float
    flops_d: float
    nnz_mean: float
    lambda_q: float
    lambda_d: float

    @property
    def total(self) -> float:
        return self.contrastive + self.lambda_q * self.flops_q + self.lambda_d * self.flops_d

    def to_line(self) -> str:
        vals = (self.contrastive, self.flops_q, self.flops_d, self.nnz_mean, self.lambda_q, self.lambda_d)
        return f"{self.step}\t" + "\t".join(f"{v:.10g}" for v in vals)


def batch_loss(
    params: Encoder,
    batch: Batch,
    columns: torch.Tensor | None,
    pad_id: int,
    lambda_q: float,
    lambda_d: float,
) -> tuple[torch.Tensor, dict]:
    """Total loss on one batch; ``columns=None`` trains the dense CLS encoder."""
    if columns is None:
        q = dense_rep_batch(params, batch.queries, pad_id)
        d = dense_rep_batch(params, batch.docs, pad_id)
        scores = q @ d.T
        con = contrastive_loss(scores, batch.positive_index())
        zero = torch.zeros((), dtype=scores.dtype)
        return con, {"contrastive": con, "flops_q": zero, "flops_d": zero, "nnz": 0.0}
    q = sparse_rep_batch(params, batch.queries, columns, pad_id)
    d = sparse_rep_batch(params, batch.docs, columns, pad_id)
    scores = q @ d.T
    con = contrastive_loss(scores, batch.positive_index())
    fq, fd = flops_loss(q), flops_loss(d)
    total = con + lambda_q * fq + lambda_d * fd
    nnz = float((d > 0).sum(dim=1).double().mean())
    return total, {"contrastive": con, "flops_q": fq, "flops_d": fd, "nnz": nnz}


class Trainer:
    """Owns an encoder and its optimizer state for the length of a run."""

    def __init__(
        self,
        params: Encoder,
        config: TrainConfig,
        pad_id: int,
        controller: VocabularyController | None = None,
    ):
        self.params = params
        self.config = config
        self.pad_id = pad_id
        self.columns = (
            torch.tensor(controller.sorted_allowed(), dtype=torch.long) if controller is not None else None
        )
        self.optimizer = torch.optim.SGD(params.parameters(), lr=config.learning_rate, momentum=config.momentum)
        self.step_count = 0

    def step(self, batch: Batch) -> StepReport:
        cfg = self.config
        lam_q = lambda_at(cfg.lambda_q, self.step_count, cfg.warmup_steps)
        lam_d = lambda_at(cfg.lambda_d, self.step_count, cfg.warmup_steps)
        self.optimizer.zero_grad(set_to_none=True)
        total, parts = batch_loss(self.params, batch, self.columns, self.pad_id, lam_q, lam_d)
        if not torch.isfinite(total):
            raise TrainingError(
                f"non-finite loss at step {self.step_count}: contrastive={float(parts['contrastive'].detach())}, "
                f"flops_q={float(parts['flops_q'].detach())}, flops_d={float(parts['flops_d'].detach())}"
            )
        total.backward()
        self.optimizer.step()
        report = StepReport(
            self.step_count,
            float(parts["contrastive"].detach()),
            float(parts["flops_q"].detach()),
            float(parts["flops_d"].detach()),
            parts["nnz"],
            lam_q,
            lam_d,
        )
        self.step_count += 1
        return report


def train_step(
    params: Encoder,
    batch: Batch,
    config: TrainConfig,
    pad_id: int,
    controller: VocabularyController | None = None,
    step: int = 0,
) -> tuple[Encoder, StepReport]:
    """One plain gradient step on a copy of ``params``; the input is left untouched."""
    updated = copy.deepcopy(params)
    trainer = Trainer(updated, config, pad_id, controller)
    trainer.step_count = step
    return updated, trainer.step(batch)


@dataclass
class TrainingLog:
    reports: list[StepReport] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.reports)

    def write(self, path: str | Path) -> None:
        header = "step\tcontrastive\tflops_q\tflops_d\tnnz_mean\tlambda_q\tlambda_d\n"
        Path(path).write_text(header + "".join(r.to_line() + "\n" for r in self.reports), encoding="utf-8")


def train(
    config: TrainConfig,
    corpus: Corpus,
    queries: Mapping[str, str],
    triples: Sequence[TrainingTriple],
    controller: VocabularyController | None,
    encoder_config: EncoderConfig,
    vocab: BaseVocabulary | None = None,
    init_seed: int | None = None,
) -> tuple[Encoder, TrainingLog]:
    """Seeded epochs over shuffled triples; ``controller=None`` trains the dense baseline.

    Incomplete trailing batches are dropped. ``config.max_steps`` caps the run.
    """
    if vocab is None:
        if controller is None:
            raise TrainingError("the dense baseline needs the base vocabulary")
        vocab = controller.base
    seed = config.seed if init_seed is None else init_seed
    params = init_encoder(encoder_config, controller, seed, base_size=len(vocab))
    trainer = Trainer(params, config, vocab.pad_id, controller)
    tlog = TrainingLog()
    usable = [t for t in triples if len(t.hard_negative_doc_ids) >= config.n_hard]
    if config.epochs == 0 or config.max_steps == 0 or len(usable) < config.batch_size:
        if config.epochs and len(usable) < config.batch_size:
            log.warning("only %d usable triples for batch size %d; no steps taken", len(usable), config.batch_size)
        return params, tlog
    rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        order = rng.permutation(len(usable))
        for start in range(0, len(order) - config.batch_size + 1, config.batch_size):
            chunk = [usable[i] for i in order[start : start + config.batch_size]]
            chunk = [TrainingTriple(t.query_id, t.positive_doc_id, t.hard_negative_doc_ids[: config.n_hard])
                     for t in chunk]
            batch = make_batch(chunk, queries, corpus, vocab, encoder_config.max_len)
            report = trainer.step(batch)
            tlog.reports.append(report)
            if report.step % 50 == 0:
                log.debug("step %d loss %.4f nnz %.1f", report.step, report.total, report.nnz_mean)
            if config.max_steps is not None and trainer.step_count >= config.max_steps:
                return params, tlog
    return params, tlog


def total_steps(config: TrainConfig, n_triples: int) -> int:
    per_epoch = n_triples // config.batch_size
    steps = per_epoch * config.epochs
    return steps if config.max_steps is None else min(steps, config.max_steps)


def in_batch_negatives(batch_size: int, n_hard: int) -> int:
    """Negatives each query sees: its own hard negatives plus every other query's documents."""
    return batch_size * (1 + n_hard) - 1

