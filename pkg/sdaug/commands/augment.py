"""``sdaug augment ra|fa``: write augmented datasets."""

from __future__ import annotations

import argparse

from ..factors import generate_fa_dataset, load_bank
from ..logger import Logger
from ..resolution import RAConfig, augment_dataset_ra
from .shared import add_seed, add_target_size, manifest_arg, positive_int, seed_of, target_size_of

NESTED = True


def arguments_augment(parser: argparse.ArgumentParser, common: argparse.ArgumentParser) -> None:
    actions = parser.add_subparsers(dest="action", required=True, metavar="action")

    ra = actions.add_parser("ra", parents=[common], help="Resolution-augmented copies of a dataset")
    ra.add_argument("--manifest", required=True)
    ra.add_argument("--out", required=True)
    add_seed(ra)
    ra.add_argument("--copies", type=positive_int, help="RA draws per record (default: 1)")
    add_target_size(ra)
    ra.set_defaults(action_handler=_augment_ra, _parser=ra)

    fa = actions.add_parser("fa", parents=[common], help="Factor-based augmentation from a factor bank")
    fa.add_argument("--bank", required=True, help="Factor bank (.sdfb) from 'factors extract'")
    fa.add_argument("--ckpt", required=True, help="Checkpoint the bank was extracted with")
    fa.add_argument("--n", type=positive_int, required=True, help="Number of samples to generate")
    fa.add_argument("--out", required=True)
    add_seed(fa)
    fa.add_argument(
        "--same-vendor-control",
        dest="same_vendor_control",
        action="store_true",
        help="Force the modality vendor to equal the anatomy vendor",
    )
    fa.set_defaults(action_handler=_augment_fa, _parser=fa)


def _augment_ra(args: argparse.Namespace, logger: Logger) -> int:
    augment_dataset_ra(
        manifest_arg(args.manifest),
        args.out,
        seed_of(args),
        copies=args.copies or 1,
        cfg=RAConfig(target_size=target_size_of(args)),
        logger=logger,
    )
    return 0


def _augment_fa(args: argparse.Namespace, logger: Logger) -> int:
    generate_fa_dataset(
        load_bank(args.bank),
        args.ckpt,
        args.n,
        seed_of(args),
        args.out,
        same_vendor_control=args.same_vendor_control,
        logger=logger,
    )
    return 0


def command_augment(args: argparse.Namespace, logger: Logger) -> int:
    """Write an RA or FA augmented dataset."""
    return args.action_handler(args, logger)
