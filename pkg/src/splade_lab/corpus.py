"""Corpus, query and qrels ingestion, the word-level tokenizer, and token counts."""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)

_PUNCT = frozenset(string.punctuation)


class CorpusFormatError(ValueError):
    """A corpus, query or qrels file could not be parsed."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    body: str
    title: str | None = None

    def __post_init__(self):
        if not self.doc_id:
            raise CorpusFormatError("document id must be nonempty")
        if not self.body and not self.title:
            raise CorpusFormatError(f"document {self.doc_id!r} has neither body nor title")


@dataclass
class Corpus:
    """An ordered collection of documents with unique ids."""

    documents: list[Document]
    title_augment: bool = False
    _by_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {}
        for i, doc in enumerate(self.documents):
            if doc.doc_id in self._by_id:
                raise CorpusFormatError(f"duplicate doc_id {doc.doc_id!r}")
            self._by_id[doc.doc_id] = i

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def __getitem__(self, doc_id: str) -> Document:
        return self.documents[self._by_id[doc_id]]

    @property
    def doc_ids(self) -> list[str]:
        return [d.doc_id for d in self.documents]

    def visible_text(self, doc: Document | str) -> str:
        """Text the encoder sees: ``title + " " + body`` under title augmentation."""
        if isinstance(doc, str):
            doc = self[doc]
        if self.title_augment and doc.title:
            return f"{doc.title} {doc.body}" if doc.body else doc.title
        return doc.body

    def texts(self) -> list[str]:
        return [self.visible_text(d) for d in self.documents]

    @classmethod
    def from_texts(cls, texts: Sequence[str], prefix: str = "d") -> "Corpus":
        width = len(str(max(len(texts) - 1, 0)))
        return cls([Document(f"{prefix}{i:0{width}d}", t) for i, t in enumerate(texts)])


def load_corpus(path: str | Path, format: str | None = None, title_augment: bool = False) -> Corpus:
    """Read a TSV (``doc_id \\t title \\t body``) or JSONL corpus.

    A two-column TSV line is read as ``doc_id \\t body``. Errors carry the
    1-based line number of the offending record.
    """
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix in (".jsonl", ".json") else "tsv"
    if format not in ("tsv", "jsonl"):
        raise ValueError(f"unknown corpus format {format!r}")

    docs: list[Document] = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            try:
                if format == "tsv":
                    parts = line.split("\t")
                    if len(parts) == 3:
                        doc_id, title, body = parts
                    elif len(parts) == 2:
                        (doc_id, body), title = parts, ""
                    else:
                        raise CorpusFormatError(f"expected 2 or 3 tab-separated fields, got {len(parts)}")
                else:
                    rec = json.loads(line)
                    if not isinstance(rec, dict) or "doc_id" not in rec or "body" not in rec:
                        raise CorpusFormatError("record must be an object with doc_id and body")
                    doc_id, body, title = str(rec["doc_id"]), str(rec["body"]), rec.get("title") or ""
                doc = Document(doc_id, body, title or None)
            except (CorpusFormatError, json.JSONDecodeError) as exc:
                raise CorpusFormatError(f"{path}:{lineno}: malformed record: {exc}") from None
            if doc.doc_id in seen:
                raise CorpusFormatError(
                    f"{path}:{lineno}: duplicate doc_id {doc.doc_id!r} (first seen at line {seen[doc.doc_id]})"
                )
            seen[doc.doc_id] = lineno
            docs.append(doc)
    return Corpus(docs, title_augment=title_augment)


def load_queries(path: str | Path) -> dict[str, str]:
    """Read ``query_id \\t text`` lines, keeping file order."""
    queries: dict[str, str] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2 or not parts[0]:
                raise CorpusFormatError(f"{path}:{lineno}: expected 'query_id<TAB>text'")
            if parts[0] in queries:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate query_id {parts[0]!r}")
            queries[parts[0]] = parts[1]
    return queries


def load_qrels(path: str | Path) -> dict[str, dict[str, int]]:
    """Read TREC qrels (``qid 0 docid grade``) into ``{qid: {docid: grade}}``."""
    qrels: dict[str, dict[str, int]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise CorpusFormatError(f"{path}:{lineno}: expected 4 whitespace-separated fields")
            qid, _, docid, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: grade {grade!r} is not an integer") from None
            if g < 0:
                raise CorpusFormatError(f"{path}:{lineno}: negative grade")
            qrels.setdefault(qid, {})[docid] = g
    return qrels


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in corpus:
            fh.write(f"{d.doc_id}\t{d.title or ''}\t{d.body}\n")


def write_queries(queries: Mapping[str, str], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for qid, text in queries.items():
            fh.write(f"{qid}\t{text}\n")


def write_qrels(qrels: Mapping[str, Mapping[str, int]], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for qid, judged in qrels.items():
            for docid, grade in judged.items():
                fh.write(f"{qid} 0 {docid} {grade}\n")


# -- tokenizer ---------------------------------------------------------------


def normalize(text: str) -> list[str]:
    """Lowercase, split on whitespace, detach leading/trailing punctuation.

    Each detached punctuation character becomes its own token; punctuation
    inside a word (``don't``) stays attached.
    """
    out: list[str] = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and raw[start] in _PUNCT:
            start += 1
        while end > start and raw[end - 1] in _PUNCT:
            end -= 1
        out.extend(raw[:start])
        if start < end:
            out.append(raw[start:end])
        out.extend(raw[end:])
    return out


@dataclass(frozen=True)
class BaseVocabulary:
    """Dense id space: specials first, then word tokens by descending frequency."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        for s in SPECIAL_TOKENS:
            if s not in self.tokens:
                raise ValueError(f"special token {s} missing from vocabulary")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def token_to_id(self) -> dict[str, int]:
        return self._index  # type: ignore[attr-defined]

    @property
    def special_ids(self) -> dict[str, int]:
        return {s: self._index[s] for s in SPECIAL_TOKENS}  # type: ignore[attr-defined]

    @property
    def pad_id(self) -> int:
        return self._index[PAD]  # type: ignore[attr-defined]

    @property
    def unk_id(self) -> int:
        return self._index[UNK]  # type: ignore[attr-defined]

    @property
    def cls_id(self) -> int:
        return self._index[CLS]  # type: ignore[attr-defined]

    @property
    def sep_id(self) -> int:
        return self._index[SEP]  # type: ignore[attr-defined]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index  # type: ignore[attr-defined]

    def is_special(self, token_id: int) -> bool:
        return self.tokens[token_id] in SPECIAL_TOKENS

    def non_special_ids(self) -> list[int]:
        return [i for i, t in enumerate(self.tokens) if t not in SPECIAL_TOKENS]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BaseVocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def train_tokenizer(corpus: Corpus | Sequence[str], max_vocab: int = 30_000, min_freq: int = 1) -> BaseVocabulary:
    """Build a vocabulary of the most frequent normalized tokens.

    Ties in frequency are broken lexicographically so the result depends only
    on the corpus text and the two limits.
    """
    if max_vocab < len(SPECIAL_TOKENS):
        raise ValueError(f"max_vocab must be >= {len(SPECIAL_TOKENS)}")
    texts = corpus.texts() if isinstance(corpus, Corpus) else list(corpus)
    if not texts:
        raise ValueError("cannot train a tokenizer on an empty corpus")
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(normalize(text))
    for s in SPECIAL_TOKENS:
        counts.pop(s, None)
    ranked = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return BaseVocabulary(SPECIAL_TOKENS + tuple(ranked[: max_vocab - len(SPECIAL_TOKENS)]))


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)


def tokenize(text: str, vocab: BaseVocabulary, max_len: int | None = None) -> TokenSequence:
    """``[CLS] tokens... [SEP]``, truncated to ``max_len`` with SEP kept last."""
    if max_len is not None and max_len < 2:
        raise ValueError("max_len must leave room for CLS and SEP")
    index, unk = vocab.token_to_id, vocab.unk_id
    ids = [index.get(t, unk) for t in normalize(text)]
    if max_len is not None:
        ids = ids[: max_len - 2]
    return TokenSequence((vocab.cls_id, *ids, vocab.sep_id))


def detokenize(seq: TokenSequence | Iterable[int], vocab: BaseVocabulary) -> list[str]:
    """Surface strings of the non-special ids in ``seq``."""
    ids = seq.ids if isinstance(seq, TokenSequence) else seq
    return [vocab.tokens[i] for i in ids if not vocab.is_special(i)]


@dataclass(frozen=True)
class FrequencyTable:
    counts: np.ndarray
    total_tokens: int

    def __getitem__(self, token_id: int) -> int:
        return int(self.counts[token_id])


def token_frequencies(corpus: Corpus | Sequence[str], vocab: BaseVocabulary) -> FrequencyTable:
    """Exact per-id counts over the tokenized corpus, specials excluded."""
    texts = corpus.texts() if isinstance(corpus, Corpus) else list(corpus)
    counts = np.zeros(len(vocab), dtype=np.int64)
    special = [vocab.token_to_id[s] for s in SPECIAL_TOKENS]
    for text in texts:
        ids = np.fromiter(tokenize(text, vocab).ids, dtype=np.int64)
        counts += np.bincount(ids, minlength=len(vocab))
    counts[special] = 0
    return FrequencyTable(counts, int(counts.sum()))
