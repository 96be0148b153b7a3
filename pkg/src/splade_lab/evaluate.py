"""Effectiveness metrics, paired significance tests, and expansion analysis."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sstats

from .search import Ranking, read_run

if TYPE_CHECKING:
    from .encoder import SparseEncoder, SparseVector
    from .index import InvertedIndex

log = logging.getLogger(__name__)

Qrels = Mapping[str, Mapping[str, int]]
SIGNIFICANCE_LEVEL = 0.01
DEFAULT_METRICS = ("rr@10", "ndcg@10", "recall@1000")


class EvalError(ValueError):
    pass


def _ids(ranking: Ranking | Sequence[str]) -> list[str]:
    return ranking.doc_ids() if isinstance(ranking, Ranking) else list(ranking)


def rr_at_k(ranking: Ranking | Sequence[str], judged: Mapping[str, int], k: int = 10, threshold: int = 1) -> float:
    for rank, doc in enumerate(_ids(ranking)[:k], start=1):
        if judged.get(doc, 0) >= threshold:
            return 1.0 / rank
    return 0.0


def ndcg_at_k(ranking: Ranking | Sequence[str], judged: Mapping[str, int], k: int = 10) -> float:
    """Gain ``2^grade - 1``, discount ``log2(rank + 1)``; 0 when no grade is positive."""
    dcg = sum((2.0 ** judged.get(d, 0) - 1.0) / math.log2(r + 1) for r, d in enumerate(_ids(ranking)[:k], start=1))
    ideal = sorted((g for g in judged.values() if g > 0), reverse=True)[:k]
    idcg = sum((2.0**g - 1.0) / math.log2(r + 1) for r, g in enumerate(ideal, start=1))
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def recall_at_k(ranking: Ranking | Sequence[str], judged: Mapping[str, int], k: int = 1000, threshold: int = 1) -> float:
    relevant = {d for d, g in judged.items() if g >= threshold}
    if not relevant:
        raise EvalError("recall is undefined without relevant documents")
    return len(relevant.intersection(_ids(ranking)[:k])) / len(relevant)


def parse_metric(name: str) -> tuple[str, int]:
    base, _, cutoff = name.lower().partition("@")
    if base not in ("rr", "ndcg", "recall") or not cutoff.isdigit():
        raise EvalError(f"unknown metric {name!r}; expected rr@k, ndcg@k or recall@k")
    return base, int(cutoff)


def metric_value(name: str, ranking: Ranking | Sequence[str], judged: Mapping[str, int], threshold: int = 1) -> float | None:
    """Metric for one query, or None when it is undefined (logged)."""
    base, k = parse_metric(name)
    if base == "rr":
        return rr_at_k(ranking, judged, k, threshold)
    if base == "ndcg":
        if not any(g > 0 for g in judged.values()):
            log.info("all-zero grades: ndcg defined as 0")
        return ndcg_at_k(ranking, judged, k)
    if not any(g >= threshold for g in judged.values()):
        log.info("no relevant documents: recall excluded")
        return None
    return recall_at_k(ranking, judged, k, threshold)


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided paired Student's t-test p-value.

    All-zero differences give 1.0; zero-variance nonzero differences give 0.0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EvalError(f"paired samples differ in length ({len(a)} vs {len(b)})")
    if len(a) < 2:
        raise EvalError("paired t-test needs at least two pairs")
    diff = a - b
    if np.all(diff == 0):
        return 1.0
    sd = diff.std(ddof=1)
    if sd == 0:
        return 0.0
    t = diff.mean() / (sd / math.sqrt(len(diff)))
    return float(min(1.0, 2.0 * sstats.t.sf(abs(t), df=len(diff) - 1)))


@dataclass
class EvalReport:
    systems: list[str]
    metrics: list[str]
    per_query: dict[str, dict[str, dict[str, float]]]  # system -> metric -> qid -> value
    means: dict[str, dict[str, float]] = field(default_factory=dict)
    pvalues: dict[str, dict[tuple[str, str], float]] = field(default_factory=dict)  # metric -> (a, b) -> p
    unknown_query_lines: dict[str, int] = field(default_factory=dict)

    def significant(self, metric: str, a: str, b: str, level: float = SIGNIFICANCE_LEVEL) -> bool:
        return self.pvalues.get(metric, {}).get((a, b), 1.0) <= level

    def letters(self) -> dict[str, str]:
        """Table-style row labels: A, B, C... in system order."""
        return {s: chr(ord("A") + i) if i < 26 else f"S{i}" for i, s in enumerate(self.systems)}

    def superscripts(self, metric: str, system: str) -> str:
        """Lowercase labels of the systems this one differs from significantly."""
        letters = self.letters()
        return "".join(letters[o].lower() for o in self.systems if o != system and self.significant(metric, system, o))

    def write(self, directory: str | Path, prefix: str = "report") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        summary = directory / f"{prefix}.tsv"
        lines = ["label\tsystem\tmetric\tmean\tsignificant_vs\n"]
        letters = self.letters()
        for s in self.systems:
            for m in self.metrics:
                lines.append(f"{letters[s]}\t{s}\t{m}\t{self.means[s][m]:.6f}\t{self.superscripts(m, s)}\n")
        summary.write_text("".join(lines), encoding="utf-8")

        per_query = directory / f"{prefix}.per_query.tsv"
        lines = ["system\tmetric\tquery_id\tvalue\n"]
        for s in self.systems:
            for m in self.metrics:
                for qid, v in sorted(self.per_query[s][m].items()):
                    lines.append(f"{s}\t{m}\t{qid}\t{v:.6f}\n")
        per_query.write_text("".join(lines), encoding="utf-8")

        sig = directory / f"{prefix}.significance.tsv"
        lines = ["metric\tsystem_a\tsystem_b\tp_value\tsignificant\n"]
        for m in self.metrics:
            for i, a in enumerate(self.systems):
                for b in self.systems[i + 1 :]:
                    p = self.pvalues.get(m, {}).get((a, b), 1.0)
                    lines.append(f"{m}\t{a}\t{b}\t{p:.6g}\t{int(p <= SIGNIFICANCE_LEVEL)}\n")
        sig.write_text("".join(lines), encoding="utf-8")
        return [summary, per_query, sig]


def evaluate_rankings(
    runs: Mapping[str, Mapping[str, Ranking]],
    qrels: Qrels,
    metrics: Sequence[str] = DEFAULT_METRICS,
    threshold: int = 1,
) -> EvalReport:
    """Evaluate several systems' rankings over the judged queries.

    A judged query missing from a run counts as an empty ranking; per-metric
    query sets are shared by all systems so significance tests stay paired.
    """
    for m in metrics:
        parse_metric(m)
    systems = list(runs)
    per_query: dict[str, dict[str, dict[str, float]]] = {s: {m: {} for m in metrics} for s in systems}
    unknown: dict[str, int] = {}
    for s, rankings in runs.items():
        extra = [q for q in rankings if q not in qrels]
        if extra:
            unknown[s] = sum(len(rankings[q]) for q in extra)
            log.warning("%s: ignoring %d run lines for %d unjudged queries", s, unknown[s], len(extra))
    for qid in sorted(qrels):
        judged = qrels[qid]
        for m in metrics:
            vals = {}
            for s in systems:
                v = metric_value(m, runs[s].get(qid, Ranking(qid)), judged, threshold)
                if v is not None:
                    vals[s] = v
            if len(vals) == len(systems):
                for s, v in vals.items():
                    per_query[s][m][qid] = v
    report = EvalReport(systems, list(metrics), per_query, unknown_query_lines=unknown)
    for s in systems:
        report.means[s] = {m: float(np.mean(list(per_query[s][m].values()))) if per_query[s][m] else 0.0 for m in metrics}
    for m in metrics:
        report.pvalues[m] = {}
        for i, a in enumerate(systems):
            report.pvalues[m][(a, a)] = 1.0
            for b in systems[i + 1 :]:
                qids = sorted(per_query[a][m])
                if len(qids) >= 2:
                    p = paired_ttest([per_query[a][m][q] for q in qids], [per_query[b][m][q] for q in qids])
                else:
                    p = 1.0
                report.pvalues[m][(a, b)] = report.pvalues[m][(b, a)] = p
    return report


def evaluate_run(
    run_files: Mapping[str, str | Path] | str | Path,
    qrels: Qrels,
    metrics: Sequence[str] = DEFAULT_METRICS,
    threshold: int = 1,
) -> EvalReport:
    if isinstance(run_files, (str, Path)):
        run_files = {Path(run_files).stem: run_files}
    return evaluate_rankings({name: read_run(path) for name, path in run_files.items()}, qrels, metrics, threshold)


def random_rr_baseline(
    qrels: Qrels, doc_ids: Sequence[str], k: int = 10, trials: int = 2000, seed: int = 0, threshold: int = 1
) -> float:
    """Expected RR@k of a uniformly random ranking, estimated by simulation."""
    rng = np.random.default_rng(seed)
    n = len(doc_ids)
    position = {d: i for i, d in enumerate(doc_ids)}
    total, count = 0.0, 0
    for qid in sorted(qrels):
        rel = [position[d] for d, g in qrels[qid].items() if g >= threshold and d in position]
        if not rel:
            continue
        rel_idx = np.array(rel)  # only the count matters under a uniform shuffle
        acc = 0.0
        for _ in range(trials):
            best = int(rng.choice(n, size=len(rel_idx), replace=False).min()) + 1
            acc += 1.0 / best if best <= k else 0.0
        total += acc / trials
        count += 1
    return total / count if count else 0.0


# -- expansion analysis -------------------------------------------------------------------


@dataclass(frozen=True)
class ExpansionRow:
    term_id: int
    term: str
    count: int
    percent: float
    list_length: int


def expanded_terms(q: "SparseVector", query_token_ids: Iterable[int], base_size: int) -> set[int]:
    """Weighted dims whose token is absent from the tokenized query; latent dims always count."""
    present = set(query_token_ids)
    return {t for t in q.terms.tolist() if t >= base_size or t not in present}


def expansion_stats(
    encoder: "SparseEncoder", queries: Mapping[str, str], index: "InvertedIndex | None" = None
) -> list[ExpansionRow]:
    """How many queries expand each term, with the term's postings list length."""
    base = encoder.controller.base
    counts: dict[int, int] = {}
    for text in queries.values():
        tokens = encoder.tokenize(text)
        present = [i for i in tokens.ids if not base.is_special(i)]
        for t in expanded_terms(encoder.encode(text), present, len(base)):
            counts[t] = counts.get(t, 0) + 1
    n = len(queries)
    rows = [
        ExpansionRow(
            t,
            encoder.controller.term_name(t),
            c,
            100.0 * c / n,
            len(index.lists[t]) if index is not None and t in index.lists else 0,
        )
        for t, c in counts.items()
    ]
    rows.sort(key=lambda r: (-r.count, r.term_id))
    return rows


def write_expansion_stats(rows: Sequence[ExpansionRow], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("term\tcount\tpercent\tlist_length\n")
        for r in rows:
            fh.write(f"{r.term}\t{r.count}\t{r.percent:.1f}\t{r.list_length}\n")


def prune_query_terms(q: "SparseVector", banned: Iterable[int]) -> "SparseVector":
    from .encoder import SparseVector

    banned_arr = np.fromiter(banned, dtype=np.int64)
    keep = ~np.isin(q.terms, banned_arr)
    return SparseVector(q.terms[keep], q.weights[keep], q.source_len)
