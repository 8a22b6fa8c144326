"""
Shared argparse plumbing: config-mirroring flags and subcommand registration
"""

import argparse
from collections.abc import Callable
from typing import Any

from core.config import RunConfig

Handler = Callable[[argparse.Namespace], int]


def flag_name(field: str) -> str:
    return "--" + field.replace("_", "-")


def add_config_flags(parser: argparse.ArgumentParser, model: type[RunConfig], title: str) -> None:
    """One flag per config field; values stay strings and are validated by the model"""
    group = parser.add_argument_group(title)
    for name, field in model.model_fields.items():
        help_text = f"default: {field.default}" if field.default is not None else None
        if field.annotation is bool:
            group.add_argument(flag_name(name), dest=name, action=argparse.BooleanOptionalAction, default=None, help=help_text)
        else:
            group.add_argument(flag_name(name), dest=name, default=None, metavar=name.upper(), help=help_text)


def config_overrides(args: argparse.Namespace, model: type[RunConfig]) -> dict[str, Any]:
    return {name: getattr(args, name, None) for name in model.model_fields}


def add_command(
    subparsers: argparse._SubParsersAction,
    name: str,
    docs: dict[str, str],
    handler: Handler,
) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(
        name,
        help=docs["summary"],
        description=docs["description"],
        epilog="examples:" + docs["examples"],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", default=None, help="KEY=VALUE config file; flags override it")
    parser.set_defaults(handler=handler)
    return parser
