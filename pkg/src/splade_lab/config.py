"""Experiment configuration: an INI file with one section per stage.

Command-line overrides use ``section.key=value``.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from .encoder import EncoderConfig
from .train import TrainConfig
from .vocab import ControllerSpec

# Table 2 row order: A BM25, B dense, C full, D no_stop, E stop-150, ...
TABLE2_SYSTEMS = (
    "bm25",
    "dense",
    "full",
    "no_stop",
    "stop_only:150",
    "random_k:150",
    "random_k:768",
    "lowfreq_k:150",
    "lowfreq_k:768",
    "added_latent_k:150",
    "latent_only_k:150",
    "added_latent_k:768",
    "latent_only_k:768",
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    corpus: Path
    train_queries: Path
    eval_queries: Path
    qrels: Path
    workdir: Path
    stoplist: Path | None = None
    corpus_format: str | None = None
    title_augment: bool = False
    max_vocab: int = 30_000
    min_freq: int = 1
    controller: str = "full"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    k: int = 1000
    strategy: str = "maxscore"
    metrics: tuple[str, ...] = ("rr@10", "ndcg@10", "recall@1000")
    rel_threshold: int = 1
    prune_top: int = 100
    analyze_system: str = "full"
    systems: tuple[str, ...] = TABLE2_SYSTEMS
    seed: int = 0
    threads: int = 1
    source_text: str = ""

    def controller_spec(self, name: str | None = None) -> ControllerSpec:
        return ControllerSpec.parse(name or self.controller, seed=self.seed)

    def digest(self) -> str:
        """Hash of the effective configuration after overrides; the output location is excluded."""
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def canonical(self) -> str:
        items = []
        for f in fields(self):
            if f.name in ("source_text", "workdir"):
                continue
            value = getattr(self, f.name)
            if f.name in ("encoder", "train"):
                value = {g.name: getattr(value, g.name) for g in fields(value)}
            items.append(f"{f.name}={value!r}")
        return "\n".join(items)


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _convert(section: str, key: str, raw: str, kind: Any) -> Any:
    name = f"{section}.{key}"
    try:
        if kind is bool:
            return _BOOL[raw.strip().lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "optional_int":
            return None if raw.strip().lower() in ("", "none") else int(raw)
        if kind == "list":
            return tuple(x.strip() for x in raw.replace("\n", ",").split(",") if x.strip())
        return raw.strip()
    except (KeyError, ValueError):
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


_ENCODER_KEYS = {
    "d_model": int, "n_layers": int, "n_heads": int, "d_ff": int, "max_len": int,
    "tie_embeddings": bool, "mlm_transform": str, "dtype": str, "mlm_bias_init": float,
}
_TRAIN_KEYS = {
    "batch_size": int, "n_hard": int, "learning_rate": float, "momentum": float, "epochs": int,
    "max_steps": "optional_int", "lambda_q": float, "lambda_d": float, "warmup_steps": int, "depth": int,
}
_KNOWN = {
    "experiment": {"seed": int, "threads": int},
    "paths": {"corpus": str, "train_queries": str, "eval_queries": str, "qrels": str, "workdir": str, "stoplist": str},
    "corpus": {"format": str, "title_augment": bool},
    "tokenizer": {"max_vocab": int, "min_freq": int},
    "vocab": {"controller": str},
    "encoder": _ENCODER_KEYS,
    "train": _TRAIN_KEYS,
    "search": {"k": int, "strategy": str},
    "eval": {"metrics": "list", "rel_threshold": int},
    "analyze": {"prune_top": int, "system": str},
    "matrix": {"systems": "list"},
}


def parse_overrides(items: Sequence[str]) -> list[tuple[str, str, str]]:
    out = []
    for item in items:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        out.append((section, name, value))
    return out


def load_config(
    path: str | Path, overrides: Sequence[str] = (), seed: int | None = None, workdir: str | Path | None = None
) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    text = path.read_text(encoding="utf-8")
    parser.read_string(text, source=str(path))
    for section, key, value in parse_overrides(overrides):
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)

    values: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in _KNOWN:
            raise ConfigError(f"[{section}]: unknown section")
        for key, raw in parser.items(section):
            if key not in _KNOWN[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
            values.setdefault(section, {})[key] = _convert(section, key, raw, _KNOWN[section][key])

    base = path.parent
    paths = values.get("paths", {})
    for required in ("corpus", "train_queries", "eval_queries", "qrels"):
        if required not in paths:
            raise ConfigError(f"paths.{required}: required")

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else (base / q)

    exp = values.get("experiment", {})
    cfg_seed = exp.get("seed", 0) if seed is None else seed
    try:
        encoder = EncoderConfig(**values.get("encoder", {}))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"encoder: {exc}") from None
    try:
        train = TrainConfig(**values.get("train", {}), seed=cfg_seed)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"train: {exc}") from None

    cfg = ExperimentConfig(
        corpus=resolve(paths["corpus"]),
        train_queries=resolve(paths["train_queries"]),
        eval_queries=resolve(paths["eval_queries"]),
        qrels=resolve(paths["qrels"]),
        workdir=Path(workdir) if workdir is not None else resolve(paths.get("workdir", "work")),
        stoplist=resolve(paths["stoplist"]) if paths.get("stoplist") else None,
        corpus_format=values.get("corpus", {}).get("format"),
        title_augment=values.get("corpus", {}).get("title_augment", False),
        max_vocab=values.get("tokenizer", {}).get("max_vocab", 30_000),
        min_freq=values.get("tokenizer", {}).get("min_freq", 1),
        controller=values.get("vocab", {}).get("controller", "full"),
        encoder=encoder,
        train=train,
        k=values.get("search", {}).get("k", 1000),
        strategy=values.get("search", {}).get("strategy", "maxscore"),
        metrics=values.get("eval", {}).get("metrics", ("rr@10", "ndcg@10", "recall@1000")),
        rel_threshold=values.get("eval", {}).get("rel_threshold", 1),
        prune_top=values.get("analyze", {}).get("prune_top", 100),
        analyze_system=values.get("analyze", {}).get("system", "full"),
        systems=values.get("matrix", {}).get("systems", TABLE2_SYSTEMS),
        seed=cfg_seed,
        threads=exp.get("threads", 1),
        source_text=text,
    )
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    for name in ("corpus", "train_queries", "eval_queries", "qrels"):
        p = getattr(cfg, name)
        if not p.exists():
            raise ConfigError(f"paths.{name}: {p} does not exist")
    if cfg.stoplist is not None and not cfg.stoplist.exists():
        raise ConfigError(f"paths.stoplist: {cfg.stoplist} does not exist")
    if cfg.k <= 0:
        raise ConfigError("search.k: must be positive")
    if cfg.strategy not in ("maxscore", "exhaustive"):
        raise ConfigError("search.strategy: expected maxscore or exhaustive")
    if cfg.prune_top < 0:
        raise ConfigError("analyze.prune_top: must be nonnegative")
    if cfg.threads <= 0:
        raise ConfigError("experiment.threads: must be positive")
    for name in (cfg.controller, *[s for s in cfg.systems if s not in ("bm25", "dense")]):
        try:
            ControllerSpec.parse(name)
        except ValueError as exc:
            raise ConfigError(f"vocab.controller / matrix.systems: {exc}") from None
    from .evaluate import parse_metric

    for m in cfg.metrics:
        try:
            parse_metric(m)
        except ValueError as exc:
            raise ConfigError(f"eval.metrics: {exc}") from None


def render_toy_config(data_dir: str, workdir: str = "work", steps: int = 600, seed: int = 0) -> str:
    """A ready-to-run configuration for data written by ``splade-lab synth``."""
    return f"""[experiment]
seed = {seed}
threads = 1

[paths]
corpus = {data_dir}/corpus.tsv
train_queries = {data_dir}/train_queries.tsv
eval_queries = {data_dir}/test_queries.tsv
qrels = {data_dir}/qrels.txt
workdir = {workdir}

[tokenizer]
max_vocab = 30000
min_freq = 1

[vocab]
controller = full

[encoder]
d_model = 64
n_layers = 2
n_heads = 4
d_ff = 128
max_len = 64
dtype = float32
mlm_bias_init = -2.0

[train]
batch_size = 8
n_hard = 7
learning_rate = 0.01
epochs = 100
max_steps = {steps}
lambda_q = 0.01
lambda_d = 0.01
warmup_steps = 50
depth = 200

[search]
k = 1000
strategy = maxscore

[eval]
metrics = rr@10, ndcg@10, recall@1000
rel_threshold = 1

[analyze]
prune_top = 100
system = full
"""
