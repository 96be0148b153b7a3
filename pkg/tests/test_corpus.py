import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splade_lab.corpus import (
    CLS,
    SEP,
    SPECIAL_TOKENS,
    BaseVocabulary,
    Corpus,
    CorpusFormatError,
    Document,
    detokenize,
    load_corpus,
    load_qrels,
    load_queries,
    normalize,
    token_frequencies,
    tokenize,
    train_tokenizer,
)


def test_title_augmented_visible_text(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("d1\tVelvet\ta fabric\nd2\t\ta fabric\n")
    corpus = load_corpus(path, "tsv", title_augment=True)
    assert corpus.visible_text("d1") == "Velvet a fabric"
    assert corpus.visible_text("d2") == "a fabric"
    # original fields retained
    assert corpus["d1"].title == "Velvet"
    assert corpus["d1"].body == "a fabric"


def test_title_ignored_without_augmentation(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("d1\tVelvet\ta fabric\n")
    assert load_corpus(path).visible_text("d1") == "a fabric"


def test_jsonl_corpus(tmp_path):
    path = tmp_path / "c.jsonl"
    rows = [{"doc_id": "x", "title": "T", "body": "b c"}, {"doc_id": "y", "body": "z"}]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    corpus = load_corpus(path, title_augment=True)
    assert corpus.doc_ids == ["x", "y"]
    assert corpus.texts() == ["T b c", "z"]


def test_duplicate_doc_id_names_line(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("a\t\tone\nb\t\ttwo\na\t\tthree\n")
    with pytest.raises(CorpusFormatError, match=r":3: duplicate doc_id 'a'"):
        load_corpus(path)


def test_malformed_record_names_line(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"doc_id": "a", "body": "x"}\n{"doc_id": "b"}\n')
    with pytest.raises(CorpusFormatError, match=r":2: malformed"):
        load_corpus(path)


def test_empty_body_requires_title():
    with pytest.raises(CorpusFormatError):
        Document("d", "")
    assert Document("d", "", "title").title == "title"


def test_queries_and_qrels(tmp_path):
    q = tmp_path / "q.tsv"
    q.write_text("1\twhat is velvet\n2\thello\n")
    r = tmp_path / "qrels.txt"
    r.write_text("1 0 d1 1\n1 0 d2 0\n2 0 d3 2\n")
    assert load_queries(q) == {"1": "what is velvet", "2": "hello"}
    assert load_qrels(r) == {"1": {"d1": 1, "d2": 0}, "2": {"d3": 2}}


def test_normalize_detaches_punctuation():
    assert normalize("A b!") == ["a", "b", "!"]
    assert normalize("(Hello), don't...") == ["(", "hello", ")", ",", "don't", ".", ".", "."]


def test_train_tokenizer_orders_by_frequency():
    vocab = train_tokenizer(["a b", "a c"], max_vocab=10, min_freq=1)
    assert vocab.tokens[: len(SPECIAL_TOKENS)] == SPECIAL_TOKENS
    # "a" (2 occurrences) first, then b, c tied at 1 broken lexicographically
    assert vocab.tokens[len(SPECIAL_TOKENS) :] == ("a", "b", "c")
    assert vocab.token_to_id["a"] == len(SPECIAL_TOKENS)


def test_min_freq_excludes_rare_tokens():
    vocab = train_tokenizer(["x x x"], max_vocab=10, min_freq=4)
    assert vocab.tokens == SPECIAL_TOKENS


def test_max_vocab_truncates():
    vocab = train_tokenizer(["a a a b b c"], max_vocab=6)
    assert vocab.tokens[4:] == ("a", "b")


def test_tokenizer_is_deterministic():
    texts = ["the cat sat", "on the mat", "the end"]
    assert train_tokenizer(texts, 50) == train_tokenizer(list(texts), 50)


def test_tokenizer_errors():
    with pytest.raises(ValueError):
        train_tokenizer([], 10)
    with pytest.raises(ValueError):
        train_tokenizer(["a"], 3)


def test_vocab_ids_dense_and_inverse():
    vocab = train_tokenizer(["q w e r t y"], 100)
    assert all(vocab.token_to_id[t] == i for i, t in enumerate(vocab.tokens))
    assert sorted(vocab.special_ids.values()) == [0, 1, 2, 3]


def test_vocab_save_load(tmp_path):
    vocab = train_tokenizer(["a b , .", "c"], 100)
    vocab.save(tmp_path / "vocab.txt")
    assert BaseVocabulary.load(tmp_path / "vocab.txt") == vocab
    lines = (tmp_path / "vocab.txt").read_text().splitlines()
    assert lines[vocab.token_to_id["c"]] == "c"


@pytest.fixture
def abv():
    return BaseVocabulary(SPECIAL_TOKENS + ("a", "b", "!"))


def test_tokenize_examples(abv):
    assert tokenize("", abv).ids == (abv.cls_id, abv.sep_id)
    a, b, bang = (abv.token_to_id[t] for t in "ab!")
    assert tokenize("A b!", abv).ids == (abv.cls_id, a, b, bang, abv.sep_id)
    assert tokenize("zzz", abv).ids == (abv.cls_id, abv.unk_id, abv.sep_id)


def test_tokenize_truncation_keeps_sep(abv):
    seq = tokenize("a b a b a b", abv, max_len=4)
    assert seq.length == 4
    assert seq.ids[0] == abv.token_to_id[CLS] and seq.ids[-1] == abv.token_to_id[SEP]


def test_token_frequencies_counts():
    vocab = train_tokenizer(["a a b"], 10)
    freq = token_frequencies(["a a b"], vocab)
    assert freq[vocab.token_to_id["a"]] == 2
    assert freq[vocab.token_to_id["b"]] == 1
    assert freq.total_tokens == 3


def test_token_frequencies_empty_corpus():
    vocab = train_tokenizer(["a b"], 10)
    freq = token_frequencies([], vocab)
    assert freq.total_tokens == 0 and not freq.counts.any()


words = st.sampled_from(["alpha", "beta", "gamma", "the", "of", ",", ".", "don't"])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(words, max_size=12).map(" ".join), min_size=1, max_size=8))
def test_frequency_conservation(texts):
    vocab = train_tokenizer(texts + ["alpha"], 100)
    freq = token_frequencies(texts, vocab)
    emitted = sum(sum(1 for i in tokenize(t, vocab).ids if not vocab.is_special(i)) for t in texts)
    assert freq.total_tokens == emitted == int(freq.counts.sum())


@settings(max_examples=60, deadline=None)
@given(st.lists(words, max_size=20))
def test_round_trip_in_vocab_text(tokens):
    vocab = train_tokenizer([" ".join(["alpha beta gamma the of , . don't"])], 100)
    seq = tokenize(" ".join(tokens), vocab)
    strings = detokenize(seq, vocab)
    assert tokenize(" ".join(strings), vocab).ids == seq.ids


def test_corpus_rejects_duplicates():
    with pytest.raises(CorpusFormatError):
        Corpus([Document("a", "x"), Document("a", "y")])
