"""``sdaug train``: train one model from a preset, a config file and flags."""

from __future__ import annotations

import argparse
from dataclasses import replace

from ..config import default_workers
from ..logger import Logger
from ..training import PRESET_NAMES, PRETRAIN_PRESET, TrainConfig, load_train_config, resolve_preset, train
from .shared import add_seed, add_target_size, manifest_arg, non_negative_int, positive_int

# flag dest -> TrainConfig field
_FLAG_FIELDS = {
    "seed": "seed",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr": "lr0",
    "mode": "mode",
    "model": "model",
    "ra": "use_ra",
    "fa_dataset": "fa_dataset",
    "target_size": "target_size",
    "workers": "workers",
    "include_held_out": "include_held_out",
    "validation_fraction": "validation_fraction",
}


def arguments_train(parser: argparse.ArgumentParser, common: argparse.ArgumentParser) -> None:
    presets = [*PRESET_NAMES, PRETRAIN_PRESET]
    parser.add_argument("--preset", choices=presets, help="Ablation preset to start from")
    parser.add_argument("--desk", action="store_true", help="Desk-scale preset epochs (15 instead of 50)")
    parser.add_argument("--manifest", required=True, help="Training manifest (file or directory)")
    parser.add_argument("--out", required=True, help="Run directory for best.pt, train_log.csv and config.env")
    add_seed(parser)
    parser.add_argument("--epochs", type=positive_int)
    parser.add_argument("--batch-size", dest="batch_size", type=positive_int)
    parser.add_argument("--lr", type=float, help="Initial learning rate")
    parser.add_argument("--mode", choices=["FS", "SS"])
    parser.add_argument("--model", choices=["UNET", "SDNET"])
    parser.add_argument("--ra", action=argparse.BooleanOptionalAction, default=None, help="Resolution augmentation")
    parser.add_argument("--fa-dataset", dest="fa_dataset", help="Factor-augmented dataset to merge into the pool")
    add_target_size(parser)
    parser.add_argument("--workers", type=non_negative_int, help="DataLoader workers (default: $SDAUG_WORKERS or 0)")
    parser.add_argument("--include-held-out", dest="include_held_out", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--validation-fraction", dest="validation_fraction", type=float)
    parser.set_defaults(merge_config=False)


def resolve_train_config(args: argparse.Namespace) -> TrainConfig:
    """Preset, then the --config file, then explicit flags."""
    config = resolve_preset(args.preset, desk=args.desk) if args.preset else TrainConfig()
    if args.config:
        config = load_train_config(args.config, config)
    overrides = {field: getattr(args, dest) for dest, field in _FLAG_FIELDS.items() if getattr(args, dest) is not None}
    config = replace(config, **overrides)
    if args.workers is None and config.workers == 0:
        config = replace(config, workers=default_workers())
    return config


def command_train(args: argparse.Namespace, logger: Logger) -> int:
    """Train a segmentation model and keep the best-validation checkpoint."""
    config = resolve_train_config(args)
    checkpoint, log = train(config, manifest_arg(args.manifest), args.out, logger)
    logger.info("train", f"{len(log.rows)} epochs, best val Dice {log.best_val_dice:.4f}, checkpoint {checkpoint}")
    return 0
