"""Toy SPLADE encoder: a small transformer, an MLM head over the controller's
output dimensions, and log-saturated max pooling into sparse vectors.

Weights default to float64 on the CPU so gradients can be checked against
finite differences; float32 is available for faster toy training.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .corpus import BaseVocabulary, TokenSequence, tokenize
from .vocab import VocabularyController, allowed_mask

class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_len: int = 64
    tie_embeddings: bool = True
    mlm_transform: str = "gelu"  # "gelu" (dense + GELU + LayerNorm) or "identity"
    dtype: str = "float64"
    mlm_bias_init: float = 0.0

    def __post_init__(self):
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "max_len"):
            if getattr(self, name) <= 0:
                raise EncoderError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise EncoderError("d_model must be divisible by n_heads")
        if self.max_len < 2:
            raise EncoderError("max_len must be at least 2")
        if self.mlm_transform not in ("gelu", "identity"):
            raise EncoderError(f"unknown mlm_transform {self.mlm_transform!r}")
        if self.dtype not in ("float64", "float32"):
            raise EncoderError("dtype must be float64 or float32")

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


class _Layer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        dtype = cfg.torch_dtype
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model, dtype=dtype)
        self.out = nn.Linear(cfg.d_model, cfg.d_model, dtype=dtype)
        self.ln1 = nn.LayerNorm(cfg.d_model, dtype=dtype)
        self.ff1 = nn.Linear(cfg.d_model, cfg.d_ff, dtype=dtype)
        self.ff2 = nn.Linear(cfg.d_ff, cfg.d_model, dtype=dtype)
        self.ln2 = nn.LayerNorm(cfg.d_model, dtype=dtype)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        h = self.n_heads
        q, k, v = self.qkv(x).view(b, n, 3, h, d // h).permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-1, -2)) / math.sqrt(d // h)
        att = att.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        ctx = (att.softmax(-1) @ v).transpose(1, 2).reshape(b, n, d)
        x = self.ln1(x + self.out(ctx))
        return self.ln2(x + self.ff2(F.gelu(self.ff1(x))))


class Encoder(nn.Module):
    """All encoder weights. ``output_dim`` rows of token embeddings; latent
    rows (ids past the base vocabulary) are only reachable through the MLM head.
    """

    def __init__(self, config: EncoderConfig, base_size: int, output_dim: int, with_mlm_head: bool = True):
        super().__init__()
        if output_dim < base_size:
            raise EncoderError("output_dim must cover the base vocabulary")
        self.config = config
        self.base_size = base_size
        self.output_dim = output_dim
        self.with_mlm_head = with_mlm_head
        d = config.d_model
        dtype = config.torch_dtype
        self.token_embeddings = nn.Parameter(torch.empty(output_dim, d, dtype=dtype))
        self.position_embeddings = nn.Parameter(torch.empty(config.max_len, d, dtype=dtype))
        self.emb_ln = nn.LayerNorm(d, dtype=dtype)
        self.layers = nn.ModuleList(_Layer(config) for _ in range(config.n_layers))
        if with_mlm_head:
            if config.mlm_transform == "gelu":
                self.mlm_dense = nn.Linear(d, d, dtype=dtype)
                self.mlm_ln = nn.LayerNorm(d, dtype=dtype)
            if not config.tie_embeddings:
                self.mlm_projection = nn.Parameter(torch.empty(output_dim, d, dtype=dtype))
            self.mlm_bias = nn.Parameter(torch.zeros(output_dim, dtype=dtype))

    def projection_matrix(self) -> torch.Tensor:
        """``output_dim x d_model``; the token embedding table when tied."""
        return self.token_embeddings if self.config.tie_embeddings else self.mlm_projection

    def contextual(self, ids: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        n = ids.shape[1]
        if n > self.config.max_len:
            raise EncoderError(f"sequence length {n} exceeds max_len {self.config.max_len}")
        if ids.numel() and int(ids.max()) >= self.base_size:
            raise EncoderError("input ids must come from the base vocabulary")
        x = self.emb_ln(self.token_embeddings[ids] + self.position_embeddings[:n])
        for layer in self.layers:
            x = layer(x, key_mask)
        return x

    def transform(self, h: torch.Tensor) -> torch.Tensor:
        if self.config.mlm_transform == "identity":
            return h
        return self.mlm_ln(F.gelu(self.mlm_dense(h)))

    def logits(self, h: torch.Tensor, columns: torch.Tensor | None = None) -> torch.Tensor:
        """MLM logits, optionally restricted to ``columns`` of the output space."""
        proj, bias = self.projection_matrix(), self.mlm_bias
        if columns is not None:
            proj, bias = proj[columns], bias[columns]
        return self.transform(h) @ proj.T + bias


def init_encoder(
    config: EncoderConfig,
    controller: VocabularyController | None,
    seed: int,
    base_size: int | None = None,
    with_mlm_head: bool = True,
) -> Encoder:
    """Seeded initialization: scaled normal weights, zero biases, unit LayerNorms.

    ``controller=None`` builds a dense-only encoder over ``base_size`` tokens.
    """
    if controller is not None:
        base_size, output_dim = controller.base_size, controller.output_dim
    elif base_size is None:
        raise EncoderError("base_size is required without a controller")
    else:
        output_dim = base_size
    enc = Encoder(config, base_size, output_dim, with_mlm_head=with_mlm_head and controller is not None)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in enc.named_parameters():
            if name == "mlm_bias":
                p.fill_(config.mlm_bias_init)
            elif name.endswith("bias"):
                p.zero_()
            elif ".ln" in name or name.startswith(("emb_ln", "mlm_ln")):
                p.fill_(1.0)
            elif name == "mlm_dense.weight":
                # identity start: each position initially predicts its own token
                p.copy_(torch.eye(config.d_model, dtype=p.dtype))
            elif p.dim() == 2 and name not in ("token_embeddings", "position_embeddings", "mlm_projection"):
                p.normal_(0.0, 1.0 / math.sqrt(p.shape[1]), generator=gen)
            else:
                p.normal_(0.0, 1.0 / math.sqrt(config.d_model), generator=gen)
    return enc


# -- batching ------------------------------------------------------------------


def _valid_mask(seqs: Sequence[TokenSequence]) -> torch.Tensor:
    n = max(len(s) for s in seqs)
    lengths = torch.tensor([len(s) for s in seqs])
    return torch.arange(n)[None, :] < lengths[:, None]


def batch_tensors(seqs: Sequence[TokenSequence], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    n = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), n), pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s.ids, dtype=torch.long)
    return ids, _valid_mask(seqs)


def pool_logits(W: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """``max_i log(1 + relu(W[..., i, j]))`` over valid rows; differentiable.

    ``W`` is ``(batch, n, dims)``. Because ``log(1 + relu(.))`` is monotone the
    max is taken on raw logits first; the gradient reaches one argmax row per
    column (the lowest index on ties).
    """
    top = W.masked_fill(~valid[..., None], float("-inf")).max(dim=-2).values
    return torch.log(1.0 + torch.relu(top))


def sparse_rep_batch(
    enc: Encoder, seqs: Sequence[TokenSequence], columns: torch.Tensor, pad_id: int
) -> torch.Tensor:
    """Differentiable pooled reps restricted to ``columns`` (the allowed dims).

    Computing logits only for allowed columns is equivalent to masking the
    full logit matrix after the fact.
    """
    ids, valid = batch_tensors(seqs, pad_id)
    h = enc.contextual(ids, valid)
    return pool_logits(enc.logits(h, columns), valid)


def dense_rep_batch(enc: Encoder, seqs: Sequence[TokenSequence], pad_id: int) -> torch.Tensor:
    ids, valid = batch_tensors(seqs, pad_id)
    return enc.contextual(ids, valid)[:, 0, :]


# -- sparse vectors -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Strictly positive impacts on sorted term ids."""

    terms: np.ndarray
    weights: np.ndarray
    source_len: int = 0

    def __post_init__(self):
        terms = np.asarray(self.terms, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if terms.shape != weights.shape or terms.ndim != 1:
            raise EncoderError("terms and weights must be 1-d arrays of equal length")
        if np.any(np.diff(terms) <= 0):
            order = np.argsort(terms, kind="stable")
            terms, weights = terms[order], weights[order]
            if np.any(np.diff(terms) == 0):
                raise EncoderError("duplicate term ids")
        if np.any(~(weights > 0)) or not np.all(np.isfinite(weights)):
            raise EncoderError("sparse vector impacts must be positive and finite")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_dict(cls, entries: dict[int, float], source_len: int = 0) -> "SparseVector":
        items = sorted((int(k), float(v)) for k, v in entries.items() if v != 0)
        return cls(np.array([k for k, _ in items], dtype=np.int64), np.array([v for _, v in items]), source_len)

    @classmethod
    def from_dense(cls, row: np.ndarray, source_len: int = 0) -> "SparseVector":
        nz = np.flatnonzero(row > 0)
        return cls(nz.astype(np.int64), row[nz].astype(np.float64), source_len)

    @property
    def entries(self) -> dict[int, float]:
        return dict(zip(self.terms.tolist(), self.weights.tolist()))

    @property
    def nnz(self) -> int:
        return len(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.terms, other.terms) and np.array_equal(self.weights, other.weights)

    def to_dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim)
        out[self.terms] = self.weights
        return out

    def to_text(self) -> str:
        return " ".join(f"{t}:{w!r}" for t, w in zip(self.terms.tolist(), self.weights.tolist()))

    @classmethod
    def from_text(cls, text: str) -> "SparseVector":
        entries = {}
        for pair in text.split():
            t, _, w = pair.partition(":")
            entries[int(t)] = float(w)
        return cls.from_dict(entries)


def score(q: SparseVector, d: SparseVector) -> float:
    """Inner product over shared term ids."""
    common, qi, di = np.intersect1d(q.terms, d.terms, assume_unique=True, return_indices=True)
    if not len(common):
        return 0.0
    return float(np.dot(q.weights[qi], d.weights[di]))


# -- public single-text operations ----------------------------------------------


def _as_tensor_seq(tokens: TokenSequence) -> tuple[torch.Tensor, torch.Tensor]:
    ids = torch.tensor([tokens.ids], dtype=torch.long)
    return ids, torch.ones_like(ids, dtype=torch.bool)


def contextual_embeddings(params: Encoder, tokens: TokenSequence) -> torch.Tensor:
    """``(len(tokens), d_model)`` matrix of contextual embeddings."""
    ids, valid = _as_tensor_seq(tokens)
    return params.contextual(ids, valid)[0]


def mlm_logits(params: Encoder, H: torch.Tensor) -> torch.Tensor:
    """``(n, output_dim)`` importance logits for every output dimension."""
    if not params.with_mlm_head:
        raise EncoderError("this encoder has no MLM head")
    return params.logits(H)


def pool_sparse(W: np.ndarray | torch.Tensor, mask: np.ndarray) -> SparseVector:
    """Log-saturated max pooling of the columns allowed by ``mask``."""
    W = W.detach().double().numpy() if isinstance(W, torch.Tensor) else np.asarray(W, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if W.ndim != 2 or mask.shape != (W.shape[1],):
        raise EncoderError("mask length must equal the number of logit columns")
    if W.shape[0] == 0:
        return SparseVector(np.zeros(0, np.int64), np.zeros(0), 0)
    # log(1 + relu(.)) is monotone, so pool the raw maxima and saturate once per column.
    colmax = W.max(axis=0)
    terms = np.flatnonzero(mask & (colmax > 0))
    weights = np.array([math.log(1.0 + v) for v in colmax[terms].tolist()], dtype=np.float64)
    keep = weights > 0
    return SparseVector(terms[keep], weights[keep], source_len=W.shape[0])


class SparseEncoder:
    """Binds an :class:`Encoder` to its controller and tokenizer for inference."""

    def __init__(self, params: Encoder, controller: VocabularyController):
        if params.output_dim != controller.output_dim:
            raise EncoderError("encoder output_dim does not match the controller")
        self.params = params
        self.controller = controller
        self.vocab: BaseVocabulary = controller.base
        self.mask = allowed_mask(controller)
        self.columns = torch.tensor(controller.sorted_allowed(), dtype=torch.long)

    def tokenize(self, text: str) -> TokenSequence:
        return tokenize(text, self.vocab, self.params.config.max_len)

    def encode(self, text: str) -> SparseVector:
        with torch.no_grad():
            tokens = self.tokenize(text)
            W = mlm_logits(self.params, contextual_embeddings(self.params, tokens))
            return pool_sparse(W, self.mask)

    def encode_many(self, texts: Iterable[str], batch_size: int = 64) -> list[SparseVector]:
        """Batched inference; identical results to :meth:`encode` up to float rounding
        in padded attention, restricted to allowed columns."""
        texts = list(texts)
        out: list[SparseVector] = []
        cols = self.columns.numpy()
        with torch.no_grad():
            for start in range(0, len(texts), batch_size):
                seqs = [self.tokenize(t) for t in texts[start : start + batch_size]]
                reps = sparse_rep_batch(self.params, seqs, self.columns, self.vocab.pad_id).double().numpy()
                for seq, row in zip(seqs, reps):
                    nz = np.flatnonzero(row > 0)
                    out.append(SparseVector(cols[nz], row[nz], len(seq)))
        return out


def encode(params: Encoder, controller: VocabularyController, text: str) -> SparseVector:
    return SparseEncoder(params, controller).encode(text)


def encode_dense(params: Encoder, vocab: BaseVocabulary, text: str) -> np.ndarray:
    """CLS row of the contextual embeddings, length ``d_model``."""
    with torch.no_grad():
        return contextual_embeddings(params, tokenize(text, vocab, params.config.max_len))[0].double().numpy().copy()


def encode_dense_many(params: Encoder, vocab: BaseVocabulary, texts: Sequence[str], batch_size: int = 64) -> np.ndarray:
    rows = []
    with torch.no_grad():
        for start in range(0, len(texts), batch_size):
            seqs = [tokenize(t, vocab, params.config.max_len) for t in texts[start : start + batch_size]]
            rows.append(dense_rep_batch(params, seqs, vocab.pad_id).double().numpy())
    return np.concatenate(rows) if rows else np.zeros((0, params.config.d_model))


# -- serialization --------------------------------------------------------------

_MAGIC = b"SPLDLAB\x00"
_VERSION = 1


def save_params(params: Encoder, path: str | Path, meta: dict | None = None) -> None:
    """Versioned header (JSON) followed by row-major float64 tensors in state_dict order."""
    state = params.state_dict()
    header = {
        "version": _VERSION,
        "config": asdict(params.config),
        "base_size": params.base_size,
        "output_dim": params.output_dim,
        "with_mlm_head": params.with_mlm_head,
        "meta": meta or {},
        "tensors": [[name, list(t.shape)] for name, t in state.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(blob)))
        fh.write(blob)
        for t in state.values():
            fh.write(np.ascontiguousarray(t.detach().double().numpy(), dtype="<f8").tobytes())


def load_params(path: str | Path) -> tuple[Encoder, dict]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise EncoderError(f"{path}: not a splade-lab parameter file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != _VERSION:
        raise EncoderError(f"{path}: unsupported parameter file version {version}")
    offset = 8 + struct.calcsize("<IQ")
    header = json.loads(data[offset : offset + hlen])
    offset += hlen
    enc = Encoder(EncoderConfig(**header["config"]), header["base_size"], header["output_dim"], header["with_mlm_head"])
    state = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.astype(np.float64)).to(enc.config.torch_dtype)
        offset += 8 * count
    enc.load_state_dict(state)
    return enc, header["meta"]
