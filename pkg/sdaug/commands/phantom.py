"""``sdaug phantom``: generate the synthetic multi-vendor dataset."""

from __future__ import annotations

import argparse
from dataclasses import replace

from ..logger import Logger
from ..phantom import default_desk_config, generate_phantom_dataset
from .shared import add_seed, non_negative_int, positive_int, seed_of


def arguments_phantom(parser: argparse.ArgumentParser, common: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, help="Dataset directory (manifest.json is written here)")
    add_seed(parser)
    parser.add_argument("--subjects", type=positive_int, help="Training subjects per vendor (default: 20)")
    parser.add_argument("--slices", type=positive_int, help="Slices per subject (default: 3)")
    parser.add_argument("--canvas", type=positive_int, help="Canvas side in pixels (default: 256)")
    parser.add_argument("--eval-subjects", dest="eval_subjects", type=non_negative_int, help="Labelled evaluation subjects per vendor (default: 5)")


def command_phantom(args: argparse.Namespace, logger: Logger) -> int:
    """Generate a synthetic multi-vendor cardiac dataset."""
    config = default_desk_config(seed_of(args))
    overrides = {
        "subjects_per_vendor": args.subjects,
        "slices_per_subject": args.slices,
        "canvas_size": args.canvas,
        "eval_subjects_per_vendor": args.eval_subjects,
    }
    config = replace(config, **{key: value for key, value in overrides.items() if value is not None})
    generate_phantom_dataset(config, args.out, logger)
    return 0
