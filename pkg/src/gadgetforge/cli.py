"""Command-line entry point: ``gadgetforge <subcommand> --config <path>``.

Exit codes: 0 success, 1 usage or config error, 2 stage failure,
3 digest mismatch or unreadable checkpoint.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .errors import CheckpointError, ConfigDigestMismatch, ConfigError
from .pipeline import RUN_CHAIN, STAGES, PipelineConfig, StageFailure, run_pipeline

EXIT_OK, EXIT_USAGE, EXIT_STAGE, EXIT_DIGEST = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gadgetforge", description="Vulnerability detection over decompiled pseudo-code.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "gen-corpus": "generate and verify the synthetic minimal-pair corpus",
        "ingest": "parse listings and write structural analyses",
        "graph": "write AST/CFG/PDG dumps per listing",
        "slice": "extract code gadgets and the train/test split",
        "embed": "train token embeddings on the training split",
        "train": "train the classifier",
        "detect": "score held-out gadgets",
        "eval": "compute metrics from predictions",
        "report": "write the JSON and text report",
        "run": "run every stage in order",
    }
    for name in list(STAGES) + ["run"]:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="pipeline config (JSON)")
        p.add_argument("--force", action="store_true", help="re-run even if up to date")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads for read-only stages")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config, seed=args.seed, threads=args.threads)
    except ConfigError as exc:
        print(f"gadgetforge: {exc}", file=sys.stderr)
        return EXIT_USAGE
    stages = RUN_CHAIN if args.command == "run" else (args.command,)
    try:
        run_pipeline(cfg, force=args.force, stages=stages, echo=print)
    except StageFailure as exc:
        print(f"gadgetforge: {exc}", file=sys.stderr)
        if isinstance(exc.cause, (ConfigDigestMismatch, CheckpointError)):
            return EXIT_DIGEST
        if isinstance(exc.cause, ConfigError):
            return EXIT_USAGE
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
