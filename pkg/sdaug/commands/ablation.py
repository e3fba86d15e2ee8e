"""``sdaug ablation``: train the five ablation models and report them side by side."""

from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path
from typing import List

from ..config import default_workers
from ..data import DatasetManifest
from ..errors import ConfigError
from ..evaluation import EvalReport, combine_reports, evaluate
from ..factors import extract_factors, generate_fa_dataset, save_bank
from ..logger import Logger
from ..phantom import EVAL_MANIFEST_FILE
from ..training import TrainConfig, ablation_presets, display_name, load_train_config, pretrain_preset, train
from .shared import add_seed, add_target_size, manifest_arg, non_negative_int, positive_int, seed_of

ABLATION_CSV = "ablation.csv"
TABLE_FILE = "table1.txt"


def arguments_ablation(parser: argparse.ArgumentParser, common: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", required=True, help="Training manifest")
    parser.add_argument(
        "--eval-manifest",
        dest="eval_manifest",
        help=f"Labelled evaluation manifest (default: {EVAL_MANIFEST_FILE} next to the training manifest)",
    )
    parser.add_argument("--out", required=True)
    add_seed(parser)
    parser.add_argument("--repeats", type=positive_int, help="Seeds to average over (default: 3)")
    parser.add_argument("--epochs", type=positive_int, help="Epochs per model (default: desk-scale 15 or $SDAUG_EPOCHS)")
    parser.add_argument("--full-epochs", dest="full_epochs", action="store_true", help="Use the 50-epoch preset default")
    parser.add_argument(
        "--train-config", dest="train_config", help="TrainConfig key=value file applied on top of every preset"
    )
    parser.add_argument("--fa-n", dest="fa_n", type=positive_int, help="FA samples per seed (default: training set size)")
    parser.add_argument("--fa-ra", dest="fa_ra", action="store_true", help="Apply RA before encoding factors")
    parser.add_argument("--workers", type=non_negative_int)
    add_target_size(parser)


def _with_overrides(config: TrainConfig, args: argparse.Namespace, seed: int) -> TrainConfig:
    if args.train_config:
        config = load_train_config(args.train_config, config)
    workers = args.workers if args.workers is not None else (config.workers or default_workers())
    config = replace(config, seed=seed, workers=workers)
    if args.target_size:
        config = replace(config, target_size=args.target_size)
    return replace(config, epochs=args.epochs) if args.epochs else config


def default_eval_manifest(manifest: DatasetManifest) -> DatasetManifest:
    """The labelled evaluation split written next to a generated training manifest."""
    candidate = manifest.root / EVAL_MANIFEST_FILE if manifest.root else None
    if candidate is None or not candidate.is_file():
        raise ConfigError(f"no {EVAL_MANIFEST_FILE} next to the training manifest; pass --eval-manifest")
    return manifest_arg(str(candidate))


def run_seed(
    args: argparse.Namespace,
    manifest: DatasetManifest,
    eval_manifest: DatasetManifest,
    seed: int,
    logger: Logger,
) -> List[EvalReport]:
    root = Path(args.out) / f"seed{seed}"
    desk = not args.full_epochs
    extractor_config = _with_overrides(pretrain_preset(desk), args, seed)
    extractor_ckpt, _ = train(extractor_config, manifest, root / "ss-sdnet", logger)
    bank = extract_factors(
        extractor_ckpt,
        manifest.training_view(),
        target_size=extractor_config.target_size,
        use_ra=args.fa_ra,
        seed=seed,
        logger=logger,
    )
    save_bank(bank, root / "bank.sdfb")
    fa_n = args.fa_n or len(manifest.training_view())
    generate_fa_dataset(bank, extractor_ckpt, fa_n, seed, root / "fa", logger=logger)

    reports: List[EvalReport] = []
    for name, preset in ablation_presets(desk).items():
        config = _with_overrides(preset, args, seed)
        if config.requires_fa:
            config = replace(config, fa_dataset=str(root / "fa"))
        checkpoint, _ = train(config, manifest, root / name, logger)
        reports.append(evaluate(checkpoint, eval_manifest, display_name(name), target_size=config.target_size, logger=logger))
    return reports


def command_ablation(args: argparse.Namespace, logger: Logger) -> int:
    """Train the ablation presets over several seeds and write the combined report."""
    manifest = manifest_arg(args.manifest)
    eval_manifest = manifest_arg(args.eval_manifest) if args.eval_manifest else default_eval_manifest(manifest)
    base_seed = seed_of(args)
    reports: List[EvalReport] = []
    for repeat in range(args.repeats or 3):
        reports += run_seed(args, manifest, eval_manifest, base_seed + repeat, logger)
    combined = combine_reports(reports)
    out = Path(args.out)
    combined.write_csv(out / ABLATION_CSV)
    (out / TABLE_FILE).write_text(combined.render_text("Average Dice per vendor (seed mean)"), encoding="utf8")
    logger.render(combined.table())
    return 0
