"""CLI entrypoint for sdaug."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .commands.registry import discover_commands
from .commands.shared import common_options
from .config import FALSE_WORDS, TRUE_WORDS, default_log_json, ensure_dotenv_loaded, read_key_values
from .errors import ConfigError, SdaugError
from .logger import Logger
from .utils import get_version

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> CliParser:
    parser = CliParser(prog="sdaug", description="Resolution and factor-based augmentation for cardiac segmentation")
    parser.add_argument("--version", action="version", version=f"sdaug {get_version()}")
    common = common_options()
    subcommands = parser.add_subparsers(dest="command", required=True, metavar="command")
    for command in discover_commands().values():
        sub = subcommands.add_parser(
            command.name,
            parents=[] if command.nested else [common],
            help=command.help,
            description=command.help,
        )
        sub.set_defaults(handler=command.handler, _parser=sub)
        command.configure(sub, common)
    return parser


def merge_config(args: argparse.Namespace) -> None:
    """Fill flags still at their defaults from the ``--config`` key=value file."""
    if not getattr(args, "config", None) or not getattr(args, "merge_config", True):
        return
    parser: argparse.ArgumentParser = args._parser
    actions = {action.dest: action for action in parser._actions}
    for key, raw in read_key_values(args.config).items():
        action = actions.get(key)
        if action is None or key in {"help", "config"}:
            raise ConfigError(f"unknown config key '{key}' for '{parser.prog}'")
        current = getattr(args, key, None)
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in TRUE_WORDS | FALSE_WORDS:
                raise ConfigError(f"config key '{key}': expected a boolean, got {raw!r}")
            if not current:
                setattr(args, key, raw.lower() in TRUE_WORDS)
            continue
        if current is not None:
            continue
        try:
            setattr(args, key, action.type(raw) if action.type else raw)
        except (TypeError, ValueError, argparse.ArgumentTypeError) as err:
            raise ConfigError(f"config key '{key}': {err}") from err


def _logger_for(args: argparse.Namespace) -> Logger:
    log_json = args.log_json or default_log_json()
    return Logger(
        command=args.command,
        log_json_path=log_json,
        enable_human_logs=not args.quiet,
        enable_file_logs=bool(log_json),
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    ensure_dotenv_loaded()
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    logger = _logger_for(args)
    try:
        merge_config(args)
        return int(args.handler(args, logger) or EXIT_OK)
    except (SdaugError, ValueError, OSError, RuntimeError) as err:
        errors = logger if logger.enable_human_logs else Logger(command=args.command)
        errors.error(type(err).__name__, str(err))
        logger.json({"type": "error", "error": type(err).__name__, "message": str(err)})
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
