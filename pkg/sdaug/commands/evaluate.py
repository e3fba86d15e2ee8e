"""``sdaug eval``: per-vendor Dice report for one checkpoint."""

from __future__ import annotations

import argparse
from pathlib import Path

from ..evaluation import evaluate
from ..logger import Logger
from .shared import add_target_size, manifest_arg, name_list, target_size_of


def arguments_eval(parser: argparse.ArgumentParser, common: argparse.ArgumentParser) -> None:
    parser.add_argument("--ckpt", required=True)
    parser.add_argument("--manifest", required=True, help="Labelled manifest to evaluate on")
    parser.add_argument("--report", required=True, help="CSV path (model,vendor,class,dice,n)")
    parser.add_argument("--model-name", dest="model_name", help="Row label (default: checkpoint directory name)")
    parser.add_argument("--vendors", type=name_list, help="Comma-separated vendor subset")
    parser.add_argument("--table", help="Also write the formatted table to this text file")
    add_target_size(parser)


def command_eval(args: argparse.Namespace, logger: Logger) -> int:
    """Evaluate a checkpoint and write the per-vendor Dice report."""
    name = args.model_name or Path(args.ckpt).resolve().parent.name
    report = evaluate(
        args.ckpt,
        manifest_arg(args.manifest),
        name,
        target_size=target_size_of(args),
        vendors=args.vendors,
        logger=logger,
    )
    report.write_csv(args.report)
    if args.table:
        Path(args.table).write_text(report.render_text(), encoding="utf8")
    logger.render(report.table())
    return 0
