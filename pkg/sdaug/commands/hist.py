"""``sdaug hist``: per-vendor pixel-area histogram."""

from __future__ import annotations

import argparse

from ..logger import Logger
from ..resolution import DEFAULT_BIN_EDGES, resolution_histogram, write_histogram_csv
from .shared import float_list, manifest_arg


def arguments_hist(parser: argparse.ArgumentParser, common: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", required=True, help="Dataset manifest (file or directory)")
    parser.add_argument("--out", required=True, help="CSV path (vendor,bin_lo,bin_hi,count)")
    parser.add_argument("--bins", type=float_list, help="Comma-separated bin edges in mm^2 (default: 0.8..2.8 step 0.1)")


def command_hist(args: argparse.Namespace, logger: Logger) -> int:
    """Write the per-vendor resolution histogram as CSV."""
    rows = resolution_histogram(manifest_arg(args.manifest), args.bins or DEFAULT_BIN_EDGES)
    path = write_histogram_csv(rows, args.out)
    logger.info("hist", f"{len(rows)} rows written to {path}")
    return 0
