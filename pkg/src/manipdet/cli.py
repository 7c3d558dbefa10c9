"""Command-line surface for the experiment pipeline.

Subcommands map one-to-one onto experiment stages, plus ``run`` for the
whole pipeline. Exit codes: 0 on success, 2 for configuration errors,
3 for stage failures.
"""

from __future__ import annotations

import argparse
import sys

from .experiment import STAGES, ConfigError, load_config, run_experiment
from .pipeline import StageError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manipdet",
        description="Train, evaluate and attack the 1.5-class image manipulation detector.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    help_text = {
        "prepare": "apply the configured manipulation to the corpus",
        "extract": "compute SPAM features into CSV tables",
        "train": "grid-search and train the four SVMs",
        "evaluate": "score the test split, clean and post-processed",
        "attack": "run the evasion attack against the configured targets",
        "report": "aggregate records into report tables",
        "run": "run every stage in order",
    }
    for name in (*STAGES, "run"):
        p = sub.add_parser(name, help=help_text[name])
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=None, help="worker processes for per-image work")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--dry-run", action="store_true",
                       help="validate the config and print the stage plan only")
        if name == "attack":
            p.add_argument("--target", choices=("2c", "15c"), default=None,
                           help="attack only this target")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, jobs=args.jobs, out_dir=args.out)
        if args.command == "attack" and args.target is not None:
            from dataclasses import replace
            cfg = replace(cfg, attack_targets=(args.target,))
        stages = STAGES if args.command == "run" else (args.command,)
        run_experiment(cfg, stages=stages, dry_run=args.dry_run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
