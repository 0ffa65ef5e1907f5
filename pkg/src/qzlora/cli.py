"""Command-line surface: per-stage commands, run-all, and demo fixtures.

Exit codes: 0 success, 2 config error, 3 upstream incomplete, 4 unit failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, UpstreamIncomplete
from .pipeline import STAGES, STATUS_FAILED, Pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UPSTREAM = 3
EXIT_UNIT_FAILURES = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qzlora",
        description="Quiz-scored image curation, LoRA training orchestration, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def _add_run_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default="config.toml", help="pipeline config TOML")
        p.add_argument("--topics", default=None,
                       help="comma-separated topic ids (default: all registered)")
        p.add_argument("--dry-run", action="store_true",
                       help="validate train/generate without spawning or calling backends")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    for stage in STAGES:
        _add_run_args(sub.add_parser(stage, help=f"run the {stage} stage"))
    _add_run_args(sub.add_parser("run-all", help="run every stage in dependency order"))

    demo = sub.add_parser("demo-fixtures", help="write a synthetic mock-mode workspace")
    demo.add_argument("--out", required=True, help="output directory")
    demo.add_argument("--topic-count", type=int, default=3)
    demo.add_argument("--images-per-topic", type=int, default=10)
    demo.add_argument("--seed", type=int, default=0)
    return parser


def _print_delta(delta: dict[str, str]) -> None:
    for key in sorted(delta):
        print(f"{delta[key]:>8}  {key}")


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)

    if args.command == "demo-fixtures":
        from .fixtures import make_demo_workspace

        config_path = make_demo_workspace(
            Path(args.out),
            topic_count=args.topic_count,
            images_per_topic=args.images_per_topic,
            seed=args.seed,
        )
        print(f"demo workspace ready; config at {config_path}")
        return EXIT_OK

    scope = [t.strip() for t in args.topics.split(",") if t.strip()] if args.topics else None
    try:
        cfg = load_config(Path(args.config), dry_run=args.dry_run, seed=args.seed)
        pipeline = Pipeline(cfg)
        if args.command == "run-all":
            delta = pipeline.run_all(scope)
        else:
            delta = pipeline.run_stage(args.command, scope)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UpstreamIncomplete as exc:
        print(f"upstream incomplete: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM

    _print_delta(delta)
    if any(status == STATUS_FAILED for status in delta.values()):
        return EXIT_UNIT_FAILURES
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
