"""Vocabulary controllers: which output dimensions the encoder may weight."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import BaseVocabulary, FrequencyTable

KINDS = ("full", "no_stop", "stop_only", "random_k", "lowfreq_k", "latent_only_k", "added_latent_k")
_NEEDS_K = {"random_k", "lowfreq_k", "latent_only_k", "added_latent_k"}
_NEEDS_STOPLIST = {"no_stop", "stop_only"}


class ControllerError(ValueError):
    pass


def default_stoplist() -> list[str]:
    """The bundled NLTK English stopword snapshot (179 entries, list order)."""
    text = resources.files("splade_lab.data").joinpath("english_stopwords.txt").read_text(encoding="utf-8")
    return [w for w in text.split("\n") if w]


def load_stoplist(path: str | Path) -> list[str]:
    return [w.strip() for w in Path(path).read_text(encoding="utf-8").split("\n") if w.strip()]


@dataclass(frozen=True)
class ControllerSpec:
    kind: str
    k: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ControllerError(f"unknown controller kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in _NEEDS_K and (self.k is None or self.k <= 0):
            raise ControllerError(f"controller kind {self.kind} needs a positive k")
        if self.k is not None and self.k <= 0:
            raise ControllerError("k must be positive")

    @property
    def name(self) -> str:
        """Short system name, e.g. ``stop_only:150``."""
        return self.kind if self.k is None else f"{self.kind}:{self.k}"

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "ControllerSpec":
        """Parse ``kind`` or ``kind:k``."""
        kind, _, k = text.strip().partition(":")
        return cls(kind, int(k) if k else None, seed)


@dataclass(frozen=True)
class VocabularyController:
    base: BaseVocabulary
    allowed: frozenset[int]
    n_latent: int
    spec: ControllerSpec
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        out = self.output_dim
        if any(j < 0 or j >= out for j in self.allowed):
            raise ControllerError("allowed ids must lie in [0, output_dim)")
        if any(j < len(self.base) and self.base.is_special(j) for j in self.allowed):
            raise ControllerError("special tokens may not be allowed output dimensions")

    @property
    def base_size(self) -> int:
        return len(self.base)

    @property
    def output_dim(self) -> int:
        return len(self.base) + self.n_latent

    def sorted_allowed(self) -> list[int]:
        return sorted(self.allowed)

    def term_name(self, term_id: int) -> str:
        """Surface token for base ids, ``latent#k`` for appended dimensions."""
        if term_id >= len(self.base):
            return f"latent#{term_id - len(self.base)}"
        return self.base.tokens[term_id]

    def is_latent(self, term_id: int) -> bool:
        return term_id >= len(self.base)

    def save(self, path: str | Path) -> None:
        lines = [
            "# splade-lab controller v1",
            f"kind\t{self.spec.kind}",
            f"k\t{'' if self.spec.k is None else self.spec.k}",
            f"seed\t{self.spec.seed}",
            f"n_latent\t{self.n_latent}",
            f"base_size\t{len(self.base)}",
        ]
        lines += [f"meta.{key}\t{value}" for key, value in sorted(self.meta.items())]
        lines.append(f"allowed\t{len(self.allowed)}")
        lines += [str(j) for j in self.sorted_allowed()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, base: BaseVocabulary) -> "VocabularyController":
        header: dict[str, str] = {}
        ids: list[int] = []
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        it = iter(lines[1:])
        for line in it:
            key, _, value = line.partition("\t")
            header[key] = value
            if key == "allowed":
                ids = [int(next(it)) for _ in range(int(value))]
                break
        if int(header["base_size"]) != len(base):
            raise ControllerError(
                f"controller was built for a base vocabulary of {header['base_size']} tokens, got {len(base)}"
            )
        spec = ControllerSpec(header["kind"], int(header["k"]) if header["k"] else None, int(header["seed"]))
        meta = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}
        return cls(base, frozenset(ids), int(header["n_latent"]), spec, meta)


def build_controller(
    spec: ControllerSpec,
    base: BaseVocabulary,
    freq: FrequencyTable | None = None,
    stoplist: Sequence[str] | None = None,
) -> VocabularyController:
    """Materialize the allowed output-dimension set for ``spec``."""
    non_special = base.non_special_ids()
    kind, k = spec.kind, spec.k
    n_latent = 0
    meta: dict = {}

    if kind in _NEEDS_STOPLIST:
        if stoplist is None:
            stoplist = default_stoplist()
        if not stoplist:
            raise ControllerError(f"{kind} requires a nonempty stoplist")
        index = base.token_to_id
        seen: set[int] = set()
        stop_ids = []
        for w in stoplist:
            j = index.get(w)
            if j is not None and j not in seen and not base.is_special(j):
                seen.add(j)
                stop_ids.append(j)
        meta["stoplist_size"] = len(stoplist)
        meta["stoplist_in_base"] = len(stop_ids)

    if kind == "full":
        allowed = set(non_special)
    elif kind == "no_stop":
        allowed = set(non_special) - set(stop_ids)
    elif kind == "stop_only":
        if not stop_ids:
            raise ControllerError("no stoplist token occurs in the base vocabulary")
        if k is not None and k > len(stop_ids):
            raise ControllerError(
                f"stop_only k={k} but only {len(stop_ids)} stoplist tokens are in the base vocabulary "
                f"(short by {k - len(stop_ids)})"
            )
        allowed = set(stop_ids[:k] if k is not None else stop_ids)
        meta["stop_truncated_to"] = len(allowed)
    elif kind == "random_k":
        _check_k(k, len(non_special), "non-special base tokens")
        rng = np.random.default_rng(spec.seed)
        allowed = set(int(j) for j in rng.choice(np.asarray(non_special), size=k, replace=False))
    elif kind == "lowfreq_k":
        if freq is None:
            raise ControllerError("lowfreq_k needs a frequency table")
        candidates = [j for j in non_special if freq.counts[j] > 0]
        _check_k(k, len(candidates), "tokens with nonzero frequency")
        candidates.sort(key=lambda j: (int(freq.counts[j]), base.tokens[j]))
        allowed = set(candidates[:k])
    elif kind == "latent_only_k":
        n_latent = k
        allowed = set(range(len(base), len(base) + k))
    else:  # added_latent_k
        n_latent = k
        allowed = set(non_special) | set(range(len(base), len(base) + k))

    return VocabularyController(base, frozenset(allowed), n_latent, spec, meta)


def _check_k(k: int, available: int, what: str) -> None:
    if k > available:
        raise ControllerError(f"k={k} exceeds the {available} available {what} (short by {k - available})")


def allowed_mask(controller: VocabularyController) -> np.ndarray:
    mask = np.zeros(controller.output_dim, dtype=bool)
    mask[list(controller.allowed)] = True
    return mask
