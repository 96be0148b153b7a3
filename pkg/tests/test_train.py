import math

import numpy as np
import pytest
import torch

from splade_lab.corpus import Corpus, train_tokenizer
from splade_lab.encoder import EncoderConfig, init_encoder
from splade_lab.index import build_bm25_stats
from splade_lab.train import (
    Batch,
    TrainConfig,
    TrainingError,
    TrainingTriple,
    batch_loss,
    contrastive_loss,
    flops_loss,
    in_batch_negatives,
    lambda_at,
    make_batch,
    mine_hard_negatives,
    read_triples,
    train,
    train_step,
    write_triples,
)
from splade_lab.vocab import ControllerSpec, build_controller

TINY = EncoderConfig(d_model=16, n_layers=1, n_heads=2, d_ff=16, max_len=48)


@pytest.fixture(scope="module")
def setup(tiny_task):
    corpus = tiny_task.corpus
    vocab = train_tokenizer(corpus, 30_000)
    bm25 = build_bm25_stats(corpus, vocab)
    triples = mine_hard_negatives(bm25, tiny_task.train_queries, tiny_task.qrels, depth=50, n_hard=3, seed=0)
    return tiny_task, vocab, bm25, triples


def test_triple_rejects_positive_as_negative():
    with pytest.raises(TrainingError):
        TrainingTriple("q", "d1", ("d2", "d1"))


def test_mining_shapes_and_determinism(setup):
    task, vocab, bm25, triples = setup
    assert triples
    for t in triples:
        assert len(t.hard_negative_doc_ids) == 3
        assert len(set(t.hard_negative_doc_ids)) == 3
        assert all(task.qrels[t.query_id].get(d, 0) < 1 for d in t.hard_negative_doc_ids)
        assert task.qrels[t.query_id][t.positive_doc_id] >= 1
    again = mine_hard_negatives(bm25, task.train_queries, task.qrels, depth=50, n_hard=3, seed=0)
    assert again == triples
    other = mine_hard_negatives(bm25, task.train_queries, task.qrels, depth=50, n_hard=3, seed=1)
    assert other != triples


def test_mining_skips_exhausted_queries(caplog):
    texts = ["a b", "a c", "x y"]
    corpus = Corpus.from_texts(texts)
    vocab = train_tokenizer(texts, 20)
    bm25 = build_bm25_stats(corpus, vocab)
    qrels = {"q": {"d0": 1, "d1": 1}}
    with caplog.at_level("INFO"):
        assert mine_hard_negatives(bm25, {"q": "a"}, qrels, depth=200, n_hard=1) == []
    assert "skipping query q" in caplog.text
    with pytest.raises(TrainingError):
        mine_hard_negatives(bm25, {"q": "a"}, {}, depth=200, n_hard=1)


def test_triples_file_round_trip(setup, tmp_path):
    triples = setup[3]
    write_triples(triples, tmp_path / "t.tsv")
    assert read_triples(tmp_path / "t.tsv") == triples
    first = (tmp_path / "t.tsv").read_text().splitlines()[0].split("\t")
    assert len(first) == 3 and len(first[2].split(",")) == 3


def test_in_batch_negatives_structural():
    cfg = TrainConfig(batch_size=8, n_hard=7)
    assert cfg.candidates_per_query == 64 and cfg.negatives_per_query == 63
    assert in_batch_negatives(8, 7) == 63


def test_contrastive_uniform_scores():
    scores = torch.zeros(8, 64, dtype=torch.float64)
    pos = torch.arange(8) * 8
    assert float(contrastive_loss(scores, pos)) == pytest.approx(math.log(64), abs=1e-12)


def test_contrastive_dominant_positive():
    scores = torch.zeros(2, 4, dtype=torch.float64)
    scores[0, 0] = scores[1, 2] = 1e3
    assert float(contrastive_loss(scores, torch.tensor([0, 2]))) < 1e-12


def test_contrastive_matches_formula():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(3, 6))
    pos = [0, 2, 4]
    expected = np.mean([-(s[i, pos[i]] - math.log(np.exp(s[i]).sum())) for i in range(3)])
    got = float(contrastive_loss(torch.tensor(s), torch.tensor(pos)))
    assert got == pytest.approx(expected, abs=1e-12)


def test_flops_examples():
    assert flops_loss(np.array([[1.0, 2.0]])) == 5.0
    assert flops_loss(np.array([[1.0, 0.0], [1.0, 2.0]])) == 2.0
    assert flops_loss(np.zeros((4, 3))) == 0.0
    assert float(flops_loss(torch.tensor([[1.0, 0.0], [1.0, 2.0]]))) == 2.0


def test_lambda_warmup():
    assert lambda_at(0.1, 0, 10) == 0.0
    assert lambda_at(0.1, 5, 10) == pytest.approx(0.025)
    assert lambda_at(0.1, 10, 10) == 0.1 == lambda_at(0.1, 50, 10)
    assert lambda_at(0.1, 0, 0) == 0.1


def _batch(setup, n=4):
    task, vocab, _, triples = setup
    return make_batch(triples[:n], task.train_queries, task.corpus, vocab, TINY.max_len)


def test_batch_layout(setup):
    b = _batch(setup)
    assert len(b.docs) == 4 * 4 and b.positive_index().tolist() == [0, 4, 8, 12]
    with pytest.raises(TrainingError):
        Batch(b.queries, b.docs[:-1], 4, 3)


def test_train_step_zero_lambda_is_pure_contrastive(setup):
    task, vocab, _, _ = setup
    c = build_controller(ControllerSpec("full"), vocab)
    enc = init_encoder(TINY, c, seed=0)
    batch = _batch(setup)
    cfg = TrainConfig(batch_size=4, n_hard=3, learning_rate=1e-2, lambda_q=0.0, lambda_d=0.0)
    updated, report = train_step(enc, batch, cfg, vocab.pad_id, c)
    # manual contrastive-only SGD step
    cols = torch.tensor(c.sorted_allowed())
    manual = init_encoder(TINY, c, seed=0)
    loss = batch_loss(manual, batch, cols, vocab.pad_id, 0.0, 0.0)[1]["contrastive"]
    loss.backward()
    with torch.no_grad():
        for p in manual.parameters():
            if p.grad is not None:
                p -= 1e-2 * p.grad
    for (n, a), (_, b) in zip(updated.named_parameters(), manual.named_parameters()):
        assert torch.allclose(a, b, rtol=0, atol=1e-15), n
    assert report.contrastive == pytest.approx(float(loss.detach()))
    # input untouched
    for a, b in zip(enc.parameters(), init_encoder(TINY, c, seed=0).parameters()):
        assert torch.equal(a, b)


def test_train_step_descends_and_is_deterministic(setup):
    task, vocab, _, _ = setup
    c = build_controller(ControllerSpec("full"), vocab)
    enc = init_encoder(TINY, c, seed=0)
    batch = _batch(setup)
    cols = torch.tensor(c.sorted_allowed())
    cfg = TrainConfig(batch_size=4, n_hard=3, learning_rate=1e-4, lambda_q=1e-2, lambda_d=1e-2, warmup_steps=0)
    before = float(batch_loss(enc, batch, cols, vocab.pad_id, 1e-2, 1e-2)[0].detach())
    a, _ = train_step(enc, batch, cfg, vocab.pad_id, c)
    b, _ = train_step(enc, batch, cfg, vocab.pad_id, c)
    after = float(batch_loss(a, batch, cols, vocab.pad_id, 1e-2, 1e-2)[0].detach())
    assert after < before
    for x, y in zip(a.parameters(), b.parameters()):
        assert torch.equal(x, y)


def test_non_finite_loss_aborts(setup):
    task, vocab, _, _ = setup
    c = build_controller(ControllerSpec("full"), vocab)
    enc = init_encoder(TINY, c, seed=0)
    with torch.no_grad():
        enc.mlm_bias.fill_(float("nan"))
    cfg = TrainConfig(batch_size=4, n_hard=3)
    with pytest.raises(TrainingError, match="non-finite"):
        train_step(enc, _batch(setup), cfg, vocab.pad_id, c)


def test_train_zero_epochs_is_noop(setup):
    task, vocab, _, triples = setup
    c = build_controller(ControllerSpec("full"), vocab)
    cfg = TrainConfig(batch_size=4, n_hard=3, epochs=0)
    params, tlog = train(cfg, task.corpus, task.train_queries, triples, c, TINY)
    assert len(tlog) == 0
    for a, b in zip(params.parameters(), init_encoder(TINY, c, seed=cfg.seed).parameters()):
        assert torch.equal(a, b)


def test_train_log_length_and_reproducibility(setup, tmp_path):
    task, vocab, _, triples = setup
    c = build_controller(ControllerSpec("random_k", 150, 0), vocab)
    cfg = TrainConfig(batch_size=4, n_hard=3, epochs=3, max_steps=7, seed=3)
    p1, log1 = train(cfg, task.corpus, task.train_queries, triples, c, TINY)
    p2, log2 = train(cfg, task.corpus, task.train_queries, triples, c, TINY)
    assert len(log1) == 7 and [r.step for r in log1.reports] == list(range(7))
    assert log1.reports == log2.reports
    for a, b in zip(p1.parameters(), p2.parameters()):
        assert torch.equal(a, b)
    log1.write(tmp_path / "train.log")
    lines = (tmp_path / "train.log").read_text().splitlines()
    assert lines[0].split("\t") == ["step", "contrastive", "flops_q", "flops_d", "nnz_mean", "lambda_q", "lambda_d"]
    assert len(lines) == 8


def test_dense_baseline_trains(setup):
    task, vocab, _, triples = setup
    cfg = TrainConfig(batch_size=4, n_hard=3, max_steps=3)
    params, tlog = train(cfg, task.corpus, task.train_queries, triples, None, TINY, vocab=vocab)
    assert len(tlog) == 3 and not params.with_mlm_head
    assert all(r.flops_d == 0.0 for r in tlog.reports)
    with pytest.raises(TrainingError):
        train(cfg, task.corpus, task.train_queries, triples, None, TINY)
