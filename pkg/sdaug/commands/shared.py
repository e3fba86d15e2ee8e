"""Argument helpers shared by the subcommand modules."""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import Tuple

from ..config import DEFAULT_SEED, DEFAULT_TARGET_SIZE
from ..data import DatasetManifest, load_manifest


def common_options() -> argparse.ArgumentParser:
    """Parent parser with the flags every subcommand accepts."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="Suppress human-readable logs")
    common.add_argument("--log-json", dest="log_json", help="Append JSON logs to this file (default: $SDAUG_LOG_JSON)")
    common.add_argument("--config", help="key=value file; explicit flags win over its values")
    return common


def positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def non_negative_int(value: str) -> int:
    number = int(value)
    if number < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return number


def float_list(value: str) -> Tuple[float, ...]:
    try:
        return tuple(float(part) for part in value.split(",") if part.strip())
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from err


def name_list(value: str) -> Tuple[str, ...]:
    return tuple(part.strip() for part in value.split(",") if part.strip())


def add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help=f"Random seed (default: {DEFAULT_SEED})")


def add_target_size(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--target-size", dest="target_size", type=positive_int, help=f"Crop/pad size (default: {DEFAULT_TARGET_SIZE})")


def seed_of(args: argparse.Namespace) -> int:
    return DEFAULT_SEED if args.seed is None else int(args.seed)


def target_size_of(args: argparse.Namespace) -> int:
    return DEFAULT_TARGET_SIZE if args.target_size is None else int(args.target_size)


def manifest_arg(path: str) -> DatasetManifest:
    return load_manifest(Path(path))
