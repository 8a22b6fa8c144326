"""
kalmatch command-line entry point
"""

import argparse
import sys
from collections.abc import Sequence

import structlog
import torch

from commands import evaluate, synth, track, train
from core import __version__
from core.config import override_settings
from core.exceptions import ConfigError, KalmatchError
from core.logging import configure_logging

logger = structlog.get_logger(__name__)

EXIT_ERROR = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kalmatch",
        description="Self-supervised data association for multi-object tracking",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="overrides KALMATCH_LOG_LEVEL")
    parser.add_argument("--log-json", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--jobs", type=int, default=None, help="sequences processed in parallel")

    subparsers = parser.add_subparsers(dest="command", required=True)
    synth.register(subparsers)
    train.register(subparsers)
    track.register(subparsers)
    evaluate.register(subparsers)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        settings = override_settings(log_level=args.log_level, log_json=args.log_json, jobs=args.jobs)
    except ConfigError as e:
        print(f"kalmatch: invalid setting {e}", file=sys.stderr)
        return EXIT_USAGE

    configure_logging(settings.log_level, settings.log_json)
    torch.set_num_threads(settings.torch_threads)

    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error("invalid_config", field=e.field, error=str(e))
        return EXIT_USAGE
    except KalmatchError as e:
        logger.error("command_failed", command=args.command, error=str(e), kind=type(e).__name__)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
