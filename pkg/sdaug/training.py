"""Optimization loop, batch scheduling, learning-rate schedule and ablation presets."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from .config import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_LR,
    DEFAULT_PLATEAU_FACTOR,
    DEFAULT_PLATEAU_PATIENCE,
    DEFAULT_PLATEAU_THRESHOLD,
    DEFAULT_SEED,
    DEFAULT_TARGET_SIZE,
    DEFAULT_UNET_WIDTHS,
    DEFAULT_VALIDATION_FRACTION,
    DESK_EPOCHS,
    RA_AREA_HI,
    RA_AREA_LO,
    ensure_dotenv_loaded,
    env_int,
    overrides_for,
    read_key_values,
)
from .data import DatasetManifest, SampleRecord, load_manifest, normalize_intensity, preprocess, read_sample, sorted_records
from .errors import ConfigError, EmptyPoolError, TrainingDivergenceError
from .evaluation import mean_foreground_dice
from .logger import HumanEntry, Logger, null_logger
from .losses import (
    DEFAULT_FOCAL_ALPHA,
    DEFAULT_FOCAL_GAMMA,
    LossTerms,
    LossWeights,
    dice_loss,
    focal_loss,
    latent_regression_loss,
    rec_loss,
    sample_modality_prior,
    total_loss,
)
from .resolution import RAConfig, apply_ra
from .sdnet import ArchSpec, SDNet, SegmentationModel, UNetSegmenter, build_model, evaluating, save_checkpoint
from .types import BatchKind, EpochRow, ModelKind, TrainMode
from .utils import round_half_away, stream_rng, write_csv

TRAIN_LOG_HEADER = ("epoch", "lr", "rec", "zrec", "dice", "focal", "val_dice")
CHECKPOINT_FILE = "best.pt"
TRAIN_LOG_FILE = "train_log.csv"
CONFIG_FILE = "config.env"

# rng stream ids under the run seed
_STREAM_LABELED = 0
_STREAM_UNLABELED = 1
_STREAM_VALIDATION = 2
_STREAM_RA = 3

PRESET_NAMES = {
    "unet-ra": "UNet+RA",
    "fs-sdnet": "FS SDNet",
    "fs-sdnet-ra": "FS SDNet+RA",
    "ss-sdnet-ra": "SS SDNet+RA",
    "ss-sdnet-ra-fa": "SS SDNet+RA+FA",
}
PRETRAIN_PRESET = "ss-sdnet"


@dataclass(frozen=True)
class TrainConfig:
    name: str = "custom"
    mode: TrainMode = "FS"
    model: ModelKind = "SDNET"
    use_ra: bool = False
    fa_dataset: Optional[str] = None
    requires_fa: bool = False
    lr0: float = DEFAULT_LR
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    plateau_patience: int = DEFAULT_PLATEAU_PATIENCE
    plateau_factor: float = DEFAULT_PLATEAU_FACTOR
    plateau_threshold: float = DEFAULT_PLATEAU_THRESHOLD
    seed: int = DEFAULT_SEED
    validation_fraction: float = DEFAULT_VALIDATION_FRACTION
    target_size: int = DEFAULT_TARGET_SIZE
    widths: Tuple[int, ...] = DEFAULT_UNET_WIDTHS
    include_held_out: bool = False
    workers: int = 0
    ra_area_lo: float = RA_AREA_LO
    ra_area_hi: float = RA_AREA_HI
    lambda_rec: float = 1.0
    lambda_zrec: float = 1.0
    lambda_dice: float = 1.0
    lambda_focal: float = 1.0
    focal_gamma: float = DEFAULT_FOCAL_GAMMA
    focal_alpha: float = DEFAULT_FOCAL_ALPHA

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", str(self.mode).upper())
        object.__setattr__(self, "model", str(self.model).upper())
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.mode not in ("FS", "SS"):
            raise ConfigError(f"mode must be FS or SS, got {self.mode!r}")
        if self.model not in ("UNET", "SDNET"):
            raise ConfigError(f"model must be UNET or SDNET, got {self.model!r}")
        if self.model == "UNET" and self.mode == "SS":
            raise ConfigError("the U-Net baseline has no unsupervised loss; use mode FS")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be > 0")
        if not (0 < self.plateau_factor < 1):
            raise ConfigError("plateau_factor must lie in (0, 1)")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not (0 <= self.validation_fraction < 1):
            raise ConfigError("validation_fraction must lie in [0, 1)")
        if self.target_size % (2 ** len(self.widths)):
            raise ConfigError(f"target_size {self.target_size} must be divisible by {2 ** len(self.widths)}")
        if self.workers < 0:
            raise ConfigError("workers must be >= 0")
        RAConfig(self.ra_area_lo, self.ra_area_hi, self.target_size)
        self.labeled_weights()

    def arch(self) -> ArchSpec:
        return ArchSpec(kind="unet" if self.model == "UNET" else "sdnet", widths=self.widths)

    def ra_config(self) -> RAConfig:
        return RAConfig(self.ra_area_lo, self.ra_area_hi, self.target_size)

    def labeled_weights(self) -> LossWeights:
        if self.model == "UNET":
            return LossWeights(0.0, 0.0, self.lambda_dice, self.lambda_focal)
        return LossWeights(self.lambda_rec, self.lambda_zrec, self.lambda_dice, self.lambda_focal)

    def unlabeled_weights(self) -> LossWeights:
        return LossWeights(self.lambda_rec, self.lambda_zrec, 0.0, 0.0)

    def to_key_values(self) -> Dict[str, str]:
        values: Dict[str, str] = {}
        for item in fields(self):
            value = getattr(self, item.name)
            if value is None:
                values[item.name] = "none"
            elif isinstance(value, tuple):
                values[item.name] = ",".join(str(part) for part in value)
            else:
                values[item.name] = str(value).lower() if isinstance(value, bool) else str(value)
        return values


def load_train_config(path: Union[str, Path], base: Optional[TrainConfig] = None) -> TrainConfig:
    """Apply a key=value file on top of ``base`` (defaults when omitted)."""
    return replace(base or TrainConfig(), **overrides_for(TrainConfig, read_key_values(path)))


def write_train_config(config: TrainConfig, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}={value}" for key, value in config.to_key_values().items()]
    target.write_text("\n".join(lines) + "\n", encoding="utf8")
    return target


# ---------------------------------------------------------------------------
# Presets


def _preset_epochs(desk: bool = False) -> int:
    ensure_dotenv_loaded()
    return env_int("SDAUG_EPOCHS", DESK_EPOCHS if desk else DEFAULT_EPOCHS)


def ablation_presets(desk: bool = False) -> Dict[str, TrainConfig]:
    """The five ablation models, keyed by CLI preset name, in report order.

    ``desk`` swaps the 50-epoch default for the desk-scale one; ``SDAUG_EPOCHS`` overrides both.
    """
    epochs = _preset_epochs(desk)
    return {
        "unet-ra": TrainConfig(name="unet-ra", mode="FS", model="UNET", use_ra=True, epochs=epochs),
        "fs-sdnet": TrainConfig(name="fs-sdnet", mode="FS", model="SDNET", use_ra=False, epochs=epochs),
        "fs-sdnet-ra": TrainConfig(name="fs-sdnet-ra", mode="FS", model="SDNET", use_ra=True, epochs=epochs),
        "ss-sdnet-ra": TrainConfig(name="ss-sdnet-ra", mode="SS", model="SDNET", use_ra=True, epochs=epochs),
        "ss-sdnet-ra-fa": TrainConfig(
            name="ss-sdnet-ra-fa", mode="SS", model="SDNET", use_ra=True, requires_fa=True, epochs=epochs
        ),
    }


def pretrain_preset(desk: bool = False) -> TrainConfig:
    """Semi-supervised SDNet on the original data; the factor extractor for FA."""
    return TrainConfig(name=PRETRAIN_PRESET, mode="SS", model="SDNET", use_ra=False, epochs=_preset_epochs(desk))


def resolve_preset(name: str, desk: bool = False) -> TrainConfig:
    presets = ablation_presets(desk)
    if name == PRETRAIN_PRESET:
        return pretrain_preset(desk)
    if name not in presets:
        choices = ", ".join([*presets, PRETRAIN_PRESET])
        raise ConfigError(f"unknown preset '{name}' (choose from {choices})")
    return presets[name]


def display_name(name: str) -> str:
    return PRESET_NAMES.get(name, "SS SDNet" if name == PRETRAIN_PRESET else name)


# ---------------------------------------------------------------------------
# Learning-rate schedule


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without a validation gain."""

    def __init__(
        self,
        optimizer: torch.optim.Optimizer,
        patience: int = DEFAULT_PLATEAU_PATIENCE,
        factor: float = DEFAULT_PLATEAU_FACTOR,
        threshold: float = DEFAULT_PLATEAU_THRESHOLD,
    ) -> None:
        self.optimizer = optimizer
        # torch reduces once the bad-epoch count exceeds its patience
        self.lrs = torch.optim.lr_scheduler.ReduceLROnPlateau(
            optimizer,
            mode="max",
            factor=factor,
            patience=patience - 1,
            threshold=threshold,
            threshold_mode="abs",
            cooldown=0,
            min_lr=0.0,
            eps=0.0,
        )

    @property
    def lr(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])

    def step(self, metric: float) -> float:
        self.lrs.step(metric)
        return self.lr


# ---------------------------------------------------------------------------
# Batch scheduling


class Batch(NamedTuple):
    kind: BatchKind
    indices: List[int]


def _chunks(items: Sequence[int], size: int) -> List[List[int]]:
    return [list(items[start : start + size]) for start in range(0, len(items), size)]


class BatchScheduler:
    """Deterministic per-epoch batch sequence over labeled and unlabeled index pools.

    FS: shuffled labeled batches, short last batch kept.
    SS: strict L/U alternation, 2 * min(labeled batches, unlabeled batches) batches per epoch.
    """

    def __init__(
        self,
        labeled: Sequence[int],
        unlabeled: Sequence[int],
        mode: TrainMode,
        seed: int,
        batch_size: int = DEFAULT_BATCH_SIZE,
    ) -> None:
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not labeled:
            raise EmptyPoolError("no labeled records to train on")
        if mode == "SS" and not unlabeled:
            raise EmptyPoolError("semi-supervised training needs unlabeled records")
        self.labeled = list(labeled)
        self.unlabeled = list(unlabeled) if mode == "SS" else []
        self.mode = mode
        self.seed = seed
        self.batch_size = batch_size

    def _shuffled(self, pool: List[int], epoch: int, stream: int) -> List[int]:
        order = stream_rng(self.seed, stream, epoch).permutation(len(pool))
        return [pool[i] for i in order]

    def epoch(self, epoch: int) -> List[Batch]:
        labeled = _chunks(self._shuffled(self.labeled, epoch, _STREAM_LABELED), self.batch_size)
        if self.mode == "FS":
            return [Batch("L", chunk) for chunk in labeled]
        unlabeled = _chunks(self._shuffled(self.unlabeled, epoch, _STREAM_UNLABELED), self.batch_size)
        batches: List[Batch] = []
        for lab, unl in zip(labeled, unlabeled):
            batches.append(Batch("L", lab))
            batches.append(Batch("U", unl))
        return batches


def batch_scheduler(
    manifest: DatasetManifest,
    mode: TrainMode,
    seed: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
    epoch: int = 0,
) -> List[Tuple[BatchKind, List[SampleRecord]]]:
    """One epoch of (kind, records) batches over ``manifest``."""
    records = manifest.records
    labeled = [i for i, record in enumerate(records) if record.labeled]
    unlabeled = [i for i, record in enumerate(records) if not record.labeled]
    scheduler = BatchScheduler(labeled, unlabeled, mode, seed, batch_size)
    return [(batch.kind, [records[i] for i in batch.indices]) for batch in scheduler.epoch(epoch)]


# ---------------------------------------------------------------------------
# Data loading


@dataclass(frozen=True)
class PoolItem:
    record: SampleRecord
    use_ra: bool


class SliceDataset(Dataset):
    """Reads, normalizes and (optionally) RA-resamples pool records; rng keyed by (seed, epoch, index)."""

    def __init__(self, items: Sequence[PoolItem], seed: int, target_size: int, ra: RAConfig) -> None:
        self.items = list(items)
        self.seed = seed
        self.target_size = target_size
        self.ra = ra
        self.epoch = 0

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, index: int) -> Dict[str, Any]:
        item = self.items[index]
        sample = read_sample(item.record)
        if item.use_ra:
            normalized = replace(sample, image=normalize_intensity(sample.image))
            sample = apply_ra(normalized, stream_rng(self.seed, _STREAM_RA, self.epoch, index), self.ra)
        else:
            sample = preprocess(sample, self.target_size, normalize=not sample.provenance)
        mask = None if sample.mask is None else torch.from_numpy(sample.mask.labels.astype(np.int64))
        return {"image": torch.from_numpy(sample.image.pixels.copy())[None], "mask": mask, "index": index}


def collate(items: List[Dict[str, Any]]) -> Dict[str, Any]:
    masks = [item["mask"] for item in items]
    return {
        "image": torch.stack([item["image"] for item in items]),
        "mask": torch.stack(masks) if all(mask is not None for mask in masks) else None,
        "index": [item["index"] for item in items],
    }


# ---------------------------------------------------------------------------
# Steps


def compute_terms(
    model: SegmentationModel,
    images: torch.Tensor,
    masks: Optional[torch.Tensor],
    weights: LossWeights,
    config: TrainConfig,
    generator: Optional[torch.Generator] = None,
) -> LossTerms:
    """Forward pass computing only the terms ``weights`` asks for; the segmentor is skipped without masks."""
    terms = LossTerms()
    need_seg = masks is not None and (weights.dice > 0 or weights.focal > 0)
    if isinstance(model, UNetSegmenter):
        if need_seg:
            probs = model(images)
            terms.dice = dice_loss(probs, masks)
            terms.focal = focal_loss(probs, masks, config.focal_gamma, config.focal_alpha)
        return terms
    anatomy = model.anatomy_encoder(images)
    if weights.rec > 0:
        z = model.modality_encoder(images)
        terms.rec = rec_loss(images, model.decoder(anatomy.channels, z))
    if weights.zrec > 0:
        z_sampled = sample_modality_prior(images.shape[0], model.arch.modality_dim, generator).to(images.dtype)
        terms.zrec = latent_regression_loss(model, anatomy.channels, z_sampled)
    if need_seg:
        probs = model.segmentor(anatomy.channels)
        terms.dice = dice_loss(probs, masks)
        terms.focal = focal_loss(probs, masks, config.focal_gamma, config.focal_alpha)
    return terms


def train_step(
    model: SegmentationModel,
    optimizer: torch.optim.Optimizer,
    batch: Dict[str, Any],
    weights: LossWeights,
    config: TrainConfig,
    generator: Optional[torch.Generator] = None,
    epoch: Optional[int] = None,
    step: Optional[int] = None,
) -> LossTerms:
    model.train()
    optimizer.zero_grad(set_to_none=True)
    terms = compute_terms(model, batch["image"], batch["mask"], weights, config, generator)
    try:
        loss = total_loss(terms, weights)
    except TrainingDivergenceError as err:
        raise TrainingDivergenceError(err.term, epoch, step) from err
    if loss.requires_grad:
        loss.backward()
        optimizer.step()
    return terms


def validate(model: SegmentationModel, records: Sequence[SampleRecord], target_size: int, batch_size: int = 8) -> float:
    """Mean foreground Dice over slices, deterministic preprocessing only."""
    if not records:
        return 0.0
    scores: List[float] = []
    with evaluating(model):
        for start in range(0, len(records), batch_size):
            samples = [preprocess(read_sample(record), target_size) for record in records[start : start + batch_size]]
            images = torch.from_numpy(np.stack([sample.image.pixels for sample in samples]))[:, None]
            predictions = model.segment_probs(images).argmax(dim=1).numpy()
            for sample, prediction in zip(samples, predictions):
                scores.append(mean_foreground_dice(prediction, sample.mask.labels))
    return float(np.mean(scores))


def _subject_of(key: str) -> str:
    return key.split("/", 1)[0]


def split_validation(
    records: Sequence[SampleRecord], fraction: float, seed: int
) -> Tuple[List[SampleRecord], List[SampleRecord]]:
    """Split labeled records by subject; at least one validation subject when two or more exist."""
    subjects = sorted({record.subject_id for record in records})
    if fraction <= 0 or len(subjects) < 2:
        return list(records), []
    count = min(len(subjects) - 1, max(1, round_half_away(fraction * len(subjects))))
    order = stream_rng(seed, _STREAM_VALIDATION).permutation(len(subjects))
    held = {subjects[i] for i in order[:count]}
    train_records = [record for record in records if record.subject_id not in held]
    val_records = [record for record in records if record.subject_id in held]
    return train_records, val_records


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainLog:
    rows: List[EpochRow] = field(default_factory=list)
    checkpoint: Optional[Path] = None

    @property
    def lrs(self) -> List[float]:
        return [row["lr"] for row in self.rows]

    @property
    def best_val_dice(self) -> float:
        return max((row["val_dice"] for row in self.rows), default=0.0)

    def write_csv(self, path: Union[str, Path]) -> Path:
        return write_csv(path, TRAIN_LOG_HEADER, self.rows)


def _build_pool(
    config: TrainConfig, manifest: DatasetManifest, val_subjects: set[str], train_labeled: List[SampleRecord]
) -> List[PoolItem]:
    records: List[SampleRecord] = list(train_labeled)
    if config.mode == "SS":
        records += manifest.training_view(config.include_held_out).unlabeled_records()
    items = [PoolItem(record, config.use_ra) for record in sorted_records(records)]
    if config.fa_dataset:
        generated = load_manifest(config.fa_dataset)
        for record in generated.records:
            source = (record.provenance or {}).get("anatomy_source", "")
            if _subject_of(source) in val_subjects:
                continue
            if not record.labeled and config.mode == "FS":
                continue
            items.append(PoolItem(record, False))
    elif config.requires_fa:
        raise ConfigError(f"preset '{config.name}' needs fa_dataset")
    return items


def train(
    config: TrainConfig,
    manifest: DatasetManifest,
    out_dir: Union[str, Path],
    logger: Optional[Logger] = None,
) -> Tuple[Path, TrainLog]:
    """Train one model; returns the best-validation checkpoint and the epoch log."""
    log = logger or null_logger("train")
    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    view = manifest.training_view(config.include_held_out)
    labeled = view.labeled_records()
    if not labeled:
        raise EmptyPoolError("manifest has no labeled records for training")
    train_labeled, val_records = split_validation(labeled, config.validation_fraction, config.seed)
    val_subjects = {record.subject_id for record in val_records}
    if not val_records:
        log.warn("validation", "fewer than two labeled subjects; validating on the training slices")
        val_records = train_labeled

    items = _build_pool(config, manifest, val_subjects, train_labeled)
    scheduler = BatchScheduler(
        [i for i, item in enumerate(items) if item.record.labeled],
        [i for i, item in enumerate(items) if not item.record.labeled],
        config.mode,
        config.seed,
        config.batch_size,
    )
    dataset = SliceDataset(items, config.seed, config.target_size, config.ra_config())

    torch.manual_seed(config.seed)
    model = build_model(config.arch())
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr0)
    schedule = PlateauSchedule(optimizer, config.plateau_patience, config.plateau_factor, config.plateau_threshold)
    generator = torch.Generator().manual_seed(config.seed)
    weights = {"L": config.labeled_weights(), "U": config.unlabeled_weights()}

    write_train_config(config, target / CONFIG_FILE)
    checkpoint = target / CHECKPOINT_FILE
    history = TrainLog(checkpoint=checkpoint)
    best = float("-inf")
    log.info(
        "train",
        f"{display_name(config.name)}: {len(items)} pool records, {len(val_records)} validation slices, "
        f"{config.epochs} epochs",
    )

    for epoch in range(config.epochs):
        batches = scheduler.epoch(epoch)
        dataset.epoch = epoch
        loader = DataLoader(
            dataset,
            batch_sampler=[batch.indices for batch in batches],
            num_workers=config.workers,
            collate_fn=collate,
        )
        lr = schedule.lr
        sums = {"rec": [], "zrec": [], "dice": [], "focal": []}
        stop = log.start_spinner(f"epoch {epoch + 1}/{config.epochs}")
        try:
            for step, (planned, batch) in enumerate(zip(batches, loader)):
                terms = train_step(model, optimizer, batch, weights[planned.kind], config, generator, epoch, step)
                for name, value in terms.as_floats().items():
                    if not np.isnan(value):
                        sums[name].append(value)
        finally:
            stop()
        val_dice = validate(model, val_records, config.target_size)
        row: EpochRow = {
            "epoch": epoch,
            "lr": lr,
            **{name: float(np.mean(values)) if values else 0.0 for name, values in sums.items()},
            "val_dice": val_dice,
        }
        history.rows.append(row)
        if val_dice > best:
            best = val_dice
            save_checkpoint(model, checkpoint, meta={"epoch": epoch, "val_dice": val_dice, "preset": config.name})
        schedule.step(val_dice)
        log.human(
            HumanEntry(
                title=f"epoch {epoch + 1}/{config.epochs}",
                body=f"lr={lr:.2e} rec={row['rec']:.4f} zrec={row['zrec']:.4f} dice={row['dice']:.4f} "
                f"focal={row['focal']:.4f} val_dice={val_dice:.4f}",
                variant="epoch",
            )
        )
        log.json({"type": "epoch", "preset": config.name, **row})

    history.write_csv(target / TRAIN_LOG_FILE)
    log.info("train", f"best validation Dice {best:.4f}; checkpoint {checkpoint}")
    return checkpoint, history
