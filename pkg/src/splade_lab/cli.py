"""``splade-lab <subcommand> --config PATH [--seed N] [--workdir DIR] [--set section.key=value ...]``.

Log verbosity comes from ``SPLADE_LAB_LOG`` (DEBUG, INFO, WARNING; default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, load_config, render_toy_config

log = logging.getLogger("splade_lab")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splade-lab", description="Desk-scale SPLADE controlled-vocabulary lab.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="INI experiment configuration")
    common.add_argument("--seed", type=int, help="override experiment.seed")
    common.add_argument("--workdir", type=Path, help="override paths.workdir")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any configuration value (repeatable)")

    sub.add_parser("ingest", parents=[common], help="tokenizer, frequencies and hard negatives")
    for name, text in (("vocab", "build a vocabulary controller"), ("train", "train an encoder"),
                       ("index", "encode and index the corpus"), ("search", "retrieve for the evaluation queries")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--system", help="controller spec such as random_k:150, or bm25 / dense "
                                         "(default: vocab.controller)")
    p = sub.add_parser("eval", parents=[common], help="evaluate runs with significance tests")
    p.add_argument("--system", dest="systems", action="append", default=[], help="system to evaluate (repeatable)")
    p = sub.add_parser("analyze", parents=[common], help="expansion statistics and query-time pruning")
    p.add_argument("--system", help="sparse system to analyze (default: analyze.system)")
    p = sub.add_parser("matrix", parents=[common], help="run every system and write one combined report")
    p.add_argument("--system", dest="systems", action="append", default=[],
                   help="restrict to these systems (repeatable; default: matrix.systems)")

    p = sub.add_parser("synth", help="write a seeded synthetic task and a matching configuration")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-docs", type=int, default=2000)
    p.add_argument("--n-train", type=int, default=500)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--steps", type=int, default=600, help="train.max_steps in the written configuration")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("SPLADE_LAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _synth(args: argparse.Namespace) -> int:
    from .synthetic import make_toy_task, write_toy_task

    task = make_toy_task(args.n_docs, args.n_train, args.n_test, seed=args.seed)
    paths = write_toy_task(task, args.out / "data")
    (args.out / "experiment.ini").write_text(render_toy_config("data", "work", args.steps, args.seed), encoding="utf-8")
    print(f"wrote {len(paths)} data files and {args.out / 'experiment.ini'}")
    return 0


def _run(args: argparse.Namespace) -> int:
    from .pipeline import Workspace

    cfg = load_config(args.config, args.set, seed=args.seed, workdir=args.workdir)
    ws = Workspace(cfg)
    cmd = args.command
    if cmd == "ingest":
        for p in ws.ingest():
            print(p)
    elif cmd in ("vocab", "train", "index", "search"):
        system = args.system or cfg.controller
        stage = {"vocab": ws.build_vocab, "train": ws.train, "index": ws.index, "search": ws.search}[cmd]
        print(stage(system))
    elif cmd == "eval":
        systems = args.systems or [cfg.controller]
        report = ws.evaluate(systems)
        _print_report(report)
    elif cmd == "analyze":
        result = ws.analyze(args.system)
        for key, value in result.items():
            print(f"{key}\t{value:.6f}")
    elif cmd == "matrix":
        report = ws.matrix(args.systems or None)
        _print_report(report)
    return 0


def _print_report(report) -> None:
    letters = report.letters()
    print("label\tsystem\t" + "\t".join(report.metrics))
    for s in report.systems:
        cells = [f"{report.means[s][m]:.4f}{report.superscripts(m, s)}" for m in report.metrics]
        print(f"{letters[s]}\t{s}\t" + "\t".join(cells))


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    _configure_logging()
    try:
        if args.command == "synth":
            return _synth(args)
        return _run(args)
    except ConfigError as exc:
        print(f"splade-lab: configuration error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"splade-lab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
