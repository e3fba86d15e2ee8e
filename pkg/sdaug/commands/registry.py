"""Discover subcommands from sdaug.commands.* modules.

A module contributes a subcommand by defining:
- ``command_<name>(args, logger) -> int``: runs the subcommand
- ``arguments_<name>(parser, common)``: adds its flags; ``common`` is the parent parser
  carrying the shared options (``--quiet``, ``--log-json``, ``--config``)
- ``NESTED = True`` when the subcommand has actions of its own (``augment ra``); those
  modules attach ``common`` to each action parser instead of the top-level one

The first docstring line of the handler becomes the help text. Commands are sorted by name.
"""

from __future__ import annotations

import argparse
import importlib
import inspect
import pkgutil
from typing import Any, Callable, Dict, List, NamedTuple, Tuple

from ..logger import Logger

CommandHandler = Callable[[argparse.Namespace, Logger], int]
ArgumentsHook = Callable[[argparse.ArgumentParser, argparse.ArgumentParser], None]


class Command(NamedTuple):
    name: str
    handler: CommandHandler
    configure: ArgumentsHook
    help: str
    nested: bool


def _no_arguments(parser: argparse.ArgumentParser, common: argparse.ArgumentParser) -> None:
    return None


def _help_for(name: str, handler: Callable) -> str:
    doc = inspect.getdoc(handler) or f"Run {name}"
    return doc.splitlines()[0].strip()


def _discover_from_module(module: Any) -> List[Tuple[str, Callable]]:
    """Return (name, handler) pairs for every command_ prefixed function in ``module``."""
    found: List[Tuple[str, Callable]] = []
    for attr_name in dir(module):
        if not attr_name.startswith("command_"):
            continue
        handler = getattr(module, attr_name)
        if callable(handler):
            found.append((attr_name[len("command_") :], handler))
    return found


def discover_commands() -> Dict[str, Command]:
    commands: Dict[str, Command] = {}
    package_name = __name__.rsplit(".", 1)[0]
    package = importlib.import_module(package_name)

    for module_info in pkgutil.iter_modules(package.__path__):
        name = module_info.name
        if name.startswith("_") or name in {"registry", "shared"}:
            continue
        module = importlib.import_module(f"{package_name}.{name}")
        for command_name, handler in _discover_from_module(module):
            if command_name in commands:
                raise ValueError(f"duplicate command '{command_name}' in {module.__name__}")
            commands[command_name] = Command(
                name=command_name,
                handler=handler,
                configure=getattr(module, f"arguments_{command_name}", _no_arguments),
                help=_help_for(command_name, handler),
                nested=bool(getattr(module, "NESTED", False)),
            )
    return dict(sorted(commands.items()))
