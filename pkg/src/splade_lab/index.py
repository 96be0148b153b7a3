"""Impact-quantized inverted index and BM25 collection statistics."""

from __future__ import annotations

import logging
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .corpus import BaseVocabulary, Corpus, normalize

if TYPE_CHECKING:
    from .encoder import Encoder, SparseVector
    from .vocab import VocabularyController

log = logging.getLogger(__name__)

MAX_LEVEL = 255


class IndexBuildError(ValueError):
    pass


def quantize(impact: float, scale: float, max_level: int = MAX_LEVEL) -> int:
    """``min(max_level, ceil(impact / scale))``; nonzero impacts never map to 0."""
    if impact < 0:
        raise IndexBuildError(f"cannot quantize negative impact {impact}")
    if scale <= 0:
        raise IndexBuildError("scale must be positive")
    return min(max_level, math.ceil(impact / scale))


def dequantize(level: int, scale: float) -> float:
    return level * scale


def quantize_array(impacts: np.ndarray, scale: float, max_level: int = MAX_LEVEL) -> np.ndarray:
    impacts = np.asarray(impacts, dtype=np.float64)
    if np.any(impacts < 0):
        raise IndexBuildError("cannot quantize negative impacts")
    return np.minimum(max_level, np.ceil(impacts / scale)).astype(np.int64)


@dataclass
class PostingsList:
    term_id: int
    ordinals: np.ndarray  # int32, strictly increasing
    levels: np.ndarray  # uint8, >= 1

    @property
    def max_level(self) -> int:
        return int(self.levels.max()) if len(self.levels) else 0

    def __len__(self) -> int:
        return len(self.ordinals)


@dataclass
class InvertedIndex:
    doc_ids: list[str]
    lists: dict[int, PostingsList]
    quant_scale: float
    output_dim: int
    _ordinal: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.quant_scale <= 0:
            raise IndexBuildError("quant_scale must be positive")
        self._ordinal = {d: i for i, d in enumerate(self.doc_ids)}

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    def ordinal(self, doc_id: str) -> int:
        return self._ordinal[doc_id]

    @property
    def total_postings(self) -> int:
        return sum(len(p) for p in self.lists.values())

    def term_ids(self) -> list[int]:
        return sorted(self.lists)

    # -- persistence ---------------------------------------------------------------

    _MAGIC = b"SPLIDX\x00\x01"
    _VERSION = 1

    def save(self, path: str | Path) -> None:
        """Length-prefixed little-endian binary; ordinals are delta-encoded."""
        out = bytearray(self._MAGIC)
        out += struct.pack("<IIdII", self._VERSION, self.doc_count, self.quant_scale, len(self.lists), self.output_dim)
        for doc_id in self.doc_ids:
            raw = doc_id.encode("utf-8")
            out += struct.pack("<I", len(raw)) + raw
        for term in self.term_ids():
            pl = self.lists[term]
            deltas = np.diff(pl.ordinals.astype(np.int64), prepend=0).astype("<u4")
            out += struct.pack("<II", term, len(pl))
            out += deltas.tobytes() + pl.levels.astype(np.uint8).tobytes()
        Path(path).write_bytes(bytes(out))

    @classmethod
    def load(cls, path: str | Path) -> "InvertedIndex":
        data = Path(path).read_bytes()
        if data[:8] != cls._MAGIC:
            raise IndexBuildError(f"{path}: not a splade-lab index file")
        off = 8
        version, doc_count, scale, n_terms, output_dim = struct.unpack_from("<IIdII", data, off)
        if version != cls._VERSION:
            raise IndexBuildError(f"{path}: unsupported index version {version}")
        off += struct.calcsize("<IIdII")
        doc_ids = []
        for _ in range(doc_count):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            doc_ids.append(data[off : off + n].decode("utf-8"))
            off += n
        lists = {}
        for _ in range(n_terms):
            term, n = struct.unpack_from("<II", data, off)
            off += 8
            deltas = np.frombuffer(data, dtype="<u4", count=n, offset=off)
            off += 4 * n
            levels = np.frombuffer(data, dtype=np.uint8, count=n, offset=off).copy()
            off += n
            lists[term] = PostingsList(term, np.cumsum(deltas, dtype=np.int64).astype(np.int32), levels)
        return cls(doc_ids, lists, scale, output_dim)


def build_index_from_vectors(
    doc_ids: Sequence[str], vectors: Sequence["SparseVector"], output_dim: int, quant_bits: int = 8
) -> InvertedIndex:
    """Quantize encoded documents with one global scale and invert them.

    Ordinals follow ascending doc_id, so ordinal order is the tie-break order.
    """
    if not doc_ids:
        raise IndexBuildError("cannot index an empty corpus")
    if len(doc_ids) != len(vectors):
        raise IndexBuildError("doc_ids and vectors differ in length")
    if not 1 <= quant_bits <= 8:
        raise IndexBuildError("quant_bits must be between 1 and 8")
    max_level = (1 << quant_bits) - 1
    order = sorted(range(len(doc_ids)), key=lambda i: doc_ids[i])
    sorted_ids = [doc_ids[i] for i in order]
    if len(set(sorted_ids)) != len(sorted_ids):
        raise IndexBuildError("duplicate doc ids")

    peak = max((float(v.weights.max()) for v in vectors if v.nnz), default=0.0)
    if peak == 0.0:
        log.warning("every document encoded to an empty vector; index has no postings")
        return InvertedIndex(sorted_ids, {}, 1.0, output_dim)
    scale = peak / max_level

    terms_parts, ords_parts, lv_parts = [], [], []
    for ordinal, i in enumerate(order):
        v = vectors[i]
        if v.nnz == 0:
            continue
        if int(v.terms.max()) >= output_dim:
            raise IndexBuildError(f"term id {int(v.terms.max())} outside output_dim {output_dim}")
        terms_parts.append(v.terms)
        ords_parts.append(np.full(v.nnz, ordinal, dtype=np.int64))
        lv_parts.append(quantize_array(v.weights, scale, max_level))
    terms = np.concatenate(terms_parts)
    ords = np.concatenate(ords_parts)
    levels = np.concatenate(lv_parts)
    keep = levels > 0
    terms, ords, levels = terms[keep], ords[keep], levels[keep]
    perm = np.lexsort((ords, terms))
    terms, ords, levels = terms[perm], ords[perm], levels[perm]
    bounds = np.flatnonzero(np.diff(terms)) + 1
    lists = {}
    for t_ords, t_lv, t in zip(np.split(ords, bounds), np.split(levels, bounds), terms[np.r_[0, bounds]]):
        lists[int(t)] = PostingsList(int(t), t_ords.astype(np.int32), t_lv.astype(np.uint8))
    return InvertedIndex(sorted_ids, lists, scale, output_dim)


def build_index(
    params: "Encoder", controller: "VocabularyController", corpus: Corpus, quant_bits: int = 8, batch_size: int = 64
) -> InvertedIndex:
    from .encoder import SparseEncoder

    if not len(corpus):
        raise IndexBuildError("cannot index an empty corpus")
    vectors = SparseEncoder(params, controller).encode_many(corpus.texts(), batch_size=batch_size)
    return build_index_from_vectors(corpus.doc_ids, vectors, controller.output_dim, quant_bits)


@dataclass(frozen=True)
class TermStat:
    term_id: int
    term: str
    list_length: int


def index_stats(index: InvertedIndex, controller: "VocabularyController | None" = None) -> tuple[list[TermStat], dict]:
    """Per-term list lengths (longest first) plus totals."""
    def name(t: int) -> str:
        return controller.term_name(t) if controller is not None else str(t)

    stats = [TermStat(t, name(t), len(pl)) for t, pl in index.lists.items()]
    stats.sort(key=lambda s: (-s.list_length, s.term_id))
    totals = {
        "terms": len(stats),
        "postings": sum(s.list_length for s in stats),
        "documents": index.doc_count,
        "quant_scale": index.quant_scale,
    }
    return stats, totals


def write_index_stats(stats: Sequence[TermStat], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("term\tterm_id\tlist_length\n")
        for s in stats:
            fh.write(f"{s.term}\t{s.term_id}\t{s.list_length}\n")


# -- BM25 ----------------------------------------------------------------------------


@dataclass
class Bm25Stats:
    """Collection statistics plus term-frequency postings over base-vocabulary ids.

    Documents are tokenized without truncation; the UNK id carries no postings
    but its occurrences count toward document length.
    """

    doc_ids: list[str]
    df: np.ndarray
    doc_lengths: np.ndarray
    postings: dict[int, tuple[np.ndarray, np.ndarray]]  # term -> (ordinals, tfs)
    vocab: BaseVocabulary

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    @property
    def avg_doc_length(self) -> float:
        return float(self.doc_lengths.mean())

    def doc_freq(self, term_id: int) -> int:
        return int(self.df[term_id]) if 0 <= term_id < len(self.df) else 0

    def query_terms(self, text: str) -> list[int]:
        """Distinct in-vocabulary term ids of ``text`` in first-occurrence order."""
        index = self.vocab.token_to_id
        seen: dict[int, None] = {}
        for tok in normalize(text):
            j = index.get(tok)
            if j is not None and not self.vocab.is_special(j):
                seen.setdefault(j, None)
        return list(seen)


def build_bm25_stats(corpus: Corpus | Sequence[str], vocab: BaseVocabulary) -> Bm25Stats:
    if isinstance(corpus, Corpus):
        doc_ids, texts = corpus.doc_ids, corpus.texts()
    else:
        texts = list(corpus)
        doc_ids = Corpus.from_texts(texts).doc_ids
    if not texts:
        raise IndexBuildError("cannot build BM25 statistics for an empty corpus")
    order = sorted(range(len(doc_ids)), key=lambda i: doc_ids[i])
    index = vocab.token_to_id
    unk = vocab.unk_id
    lengths = np.zeros(len(order), dtype=np.int64)
    per_term: dict[int, tuple[list[int], list[int]]] = {}
    for ordinal, i in enumerate(order):
        toks = [index.get(t, unk) for t in normalize(texts[i])]
        lengths[ordinal] = len(toks)
        for term, tf in sorted(Counter(toks).items()):
            if vocab.is_special(term):
                continue
            o, f = per_term.setdefault(term, ([], []))
            o.append(ordinal)
            f.append(tf)
    df = np.zeros(len(vocab), dtype=np.int64)
    postings = {}
    for term, (o, f) in per_term.items():
        df[term] = len(o)
        postings[term] = (np.array(o, dtype=np.int64), np.array(f, dtype=np.int64))
    return Bm25Stats([doc_ids[i] for i in order], df, lengths, postings, vocab)
