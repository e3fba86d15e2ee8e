"""``sdaug factors extract``: build a factor bank from a trained SDNet."""

from __future__ import annotations

import argparse

from ..factors import extract_factors, save_bank
from ..logger import Logger
from .shared import add_seed, add_target_size, manifest_arg, seed_of, target_size_of

NESTED = True


def arguments_factors(parser: argparse.ArgumentParser, common: argparse.ArgumentParser) -> None:
    actions = parser.add_subparsers(dest="action", required=True, metavar="action")
    extract = actions.add_parser("extract", parents=[common], help="Encode a dataset into a factor bank")
    extract.add_argument("--ckpt", required=True, help="SDNet checkpoint")
    extract.add_argument("--manifest", required=True)
    extract.add_argument("--out", required=True, help="Bank file (.sdfb)")
    extract.add_argument("--ra", action="store_true", help="Apply resolution augmentation before encoding")
    add_seed(extract)
    add_target_size(extract)
    extract.set_defaults(_parser=extract)


def command_factors(args: argparse.Namespace, logger: Logger) -> int:
    """Extract anatomy and modality factors into a bank file."""
    bank = extract_factors(
        args.ckpt,
        manifest_arg(args.manifest),
        target_size=target_size_of(args),
        use_ra=args.ra,
        seed=seed_of(args),
        logger=logger,
    )
    path = save_bank(bank, args.out)
    logger.info("factors", f"bank with {len(bank.anatomy_entries())} entries written to {path}")
    return 0
