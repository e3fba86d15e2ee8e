"""Deterministic synthetic multi-vendor cardiac phantoms.

Anatomy is drawn in millimetres (LV blood pool inside a myocardial ring, an RV crescent
abutting the ring, all inside a body ellipse) and rasterised at the vendor's pixel spacing,
so vendors differ both in resolution and in intensity response.
"""

from __future__ import annotations

import math
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .config import DEFAULT_SEED
from .data import (
    FOREGROUND_CLASSES,
    MANIFEST_FILE,
    DatasetManifest,
    Image2D,
    Phase,
    Sample,
    SampleRecord,
    SegMask,
    sorted_records,
    write_manifest,
    write_sample,
)
from .errors import ConfigError
from .logger import Logger, null_logger
from .utils import stream_rng

EVAL_MANIFEST_FILE = "eval_manifest.json"
MIN_CLASS_PIXELS = 30
MAX_DRAW_ATTEMPTS = 20

# Tissue levels before the vendor response curve
LEVEL_AIR = 0.0
LEVEL_BODY = 0.45
LEVEL_LV = 0.95
LEVEL_MYO = 0.25
LEVEL_RV = 0.85
BLUR_SIGMA_PX = 0.7

# Body ellipse semi-axes (mm)
BODY_AXES_MM = (110.0, 150.0)


@dataclass(frozen=True)
class VendorProfile:
    tag: str
    spacing_range_mm2: Tuple[float, float]
    intensity_gamma: float
    intensity_bias: float = 0.0
    noise_sigma: float = 0.03
    labeled: bool = True
    held_out: bool = False

    def __post_init__(self) -> None:
        lo, hi = self.spacing_range_mm2
        if not (0 < lo <= hi):
            raise ConfigError(f"vendor {self.tag}: spacing range must satisfy 0 < lo <= hi, got {(lo, hi)}")
        if self.intensity_gamma <= 0:
            raise ConfigError(f"vendor {self.tag}: gamma must be positive")
        if self.noise_sigma < 0:
            raise ConfigError(f"vendor {self.tag}: noise_sigma must be non-negative")


@dataclass(frozen=True)
class PhantomConfig:
    vendor_profiles: Tuple[VendorProfile, ...]
    subjects_per_vendor: int = 20
    slices_per_subject: int = 3
    canvas_size: int = 256
    seed: int = DEFAULT_SEED
    eval_subjects_per_vendor: int = 5

    def __post_init__(self) -> None:
        if not self.vendor_profiles:
            raise ConfigError("phantom config needs at least one vendor profile")
        tags = [profile.tag for profile in self.vendor_profiles]
        if len(set(tags)) != len(tags):
            raise ConfigError(f"duplicate vendor tags: {tags}")
        if self.subjects_per_vendor < 1:
            raise ConfigError("degenerate config: subjects_per_vendor must be >= 1")
        if self.slices_per_subject < 1:
            raise ConfigError("degenerate config: slices_per_subject must be >= 1")
        if self.canvas_size < 64:
            raise ConfigError("canvas_size must be at least 64")
        if self.eval_subjects_per_vendor < 0:
            raise ConfigError("eval_subjects_per_vendor must be >= 0")

    @property
    def semi_supervised_ready(self) -> bool:
        active = [profile for profile in self.vendor_profiles if not profile.held_out]
        return any(p.labeled for p in active) and any(not p.labeled for p in active)


def default_desk_config(seed: int = DEFAULT_SEED) -> PhantomConfig:
    """Four vendors: A/B labelled, C unlabelled, D held out (labelled for evaluation only)."""
    return PhantomConfig(
        vendor_profiles=(
            VendorProfile("A", (1.0, 1.3), intensity_gamma=0.7, intensity_bias=0.05, noise_sigma=0.03, labeled=True),
            VendorProfile("B", (1.1, 1.5), intensity_gamma=1.0, intensity_bias=0.0, noise_sigma=0.04, labeled=True),
            VendorProfile("C", (2.0, 2.4), intensity_gamma=2.5, intensity_bias=0.1, noise_sigma=0.03, labeled=False),
            VendorProfile(
                "D", (1.7, 2.1), intensity_gamma=1.6, intensity_bias=-0.05, noise_sigma=0.05, labeled=True, held_out=True
            ),
        ),
        subjects_per_vendor=20,
        slices_per_subject=3,
        canvas_size=256,
        seed=seed,
    )


@dataclass
class _Heart:
    center_mm: Tuple[float, float]
    angle: float
    lv_axes: Tuple[float, float]
    thickness: float
    rv_axes: Tuple[float, float]
    rv_shift: float


@dataclass
class _SubjectDraw:
    area: float
    heart: _Heart
    body_offset: Tuple[float, float] = (0.0, 0.0)


def _draw_subject(rng: np.random.Generator, profile: VendorProfile) -> _SubjectDraw:
    lo, hi = profile.spacing_range_mm2
    area = float(rng.uniform(lo, hi))
    lv_a = float(rng.uniform(18.0, 26.0))
    heart = _Heart(
        center_mm=(float(rng.uniform(-8.0, 8.0)), float(rng.uniform(-8.0, 8.0))),
        angle=float(rng.uniform(0.0, 2.0 * math.pi)),
        lv_axes=(lv_a, lv_a * float(rng.uniform(0.8, 1.0))),
        thickness=float(rng.uniform(7.0, 11.0)),
        rv_axes=(float(rng.uniform(22.0, 32.0)), float(rng.uniform(14.0, 20.0))),
        rv_shift=float(rng.uniform(0.25, 0.4)),
    )
    return _SubjectDraw(area=area, heart=heart, body_offset=(float(rng.uniform(-5, 5)), float(rng.uniform(-5, 5))))


def _slice_scale(slice_index: int, slices: int, phase: Phase) -> Tuple[float, float]:
    """(size scale, myocardial thickening) for a slice: smaller towards the apex and at ES."""
    apex = 1.0 - 0.3 * (slice_index / max(1, slices - 1))
    if phase is Phase.ES:
        return apex * 0.8, 1.3
    return apex, 1.0


def phase_for_slice(slice_index: int) -> Phase:
    return Phase.ED if slice_index % 2 == 0 else Phase.ES


def rasterize_labels(
    heart: _Heart,
    canvas_size: int,
    side_mm: float,
    scale: float = 1.0,
    thickening: float = 1.0,
    jitter_mm: Tuple[float, float] = (0.0, 0.0),
) -> np.ndarray:
    coords = (np.arange(canvas_size, dtype=np.float64) - (canvas_size - 1) / 2.0) * side_mm
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    cy = heart.center_mm[0] + jitter_mm[0]
    cx = heart.center_mm[1] + jitter_mm[1]
    cos_t, sin_t = math.cos(heart.angle), math.sin(heart.angle)
    # heart-aligned frame: u along the LV->RV direction
    u = (xx - cx) * cos_t + (yy - cy) * sin_t
    v = -(xx - cx) * sin_t + (yy - cy) * cos_t

    lv_a, lv_b = heart.lv_axes[0] * scale, heart.lv_axes[1] * scale
    thick = heart.thickness * scale * thickening
    out_a, out_b = lv_a + thick, lv_b + thick
    rv_len, rv_width = heart.rv_axes[0] * scale, heart.rv_axes[1] * scale

    inside_lv = (u / lv_a) ** 2 + (v / lv_b) ** 2 <= 1.0
    inside_outer = (u / out_a) ** 2 + (v / out_b) ** 2 <= 1.0
    rv_center = out_a + heart.rv_shift * rv_len
    inside_rv = ((u - rv_center) / rv_width) ** 2 + (v / rv_len) ** 2 <= 1.0

    labels = np.zeros((canvas_size, canvas_size), dtype=np.uint8)
    labels[inside_rv & ~inside_outer] = 3
    labels[inside_outer & ~inside_lv] = 2
    labels[inside_lv] = 1
    return labels


def _body_mask(canvas_size: int, side_mm: float, offset_mm: Tuple[float, float]) -> np.ndarray:
    coords = (np.arange(canvas_size, dtype=np.float64) - (canvas_size - 1) / 2.0) * side_mm
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    ay, ax = BODY_AXES_MM
    return ((yy - offset_mm[0]) / ay) ** 2 + ((xx - offset_mm[1]) / ax) ** 2 <= 1.0


def render_intensity(
    labels: np.ndarray, body: np.ndarray, profile: VendorProfile, rng: np.random.Generator
) -> np.ndarray:
    levels = np.where(body, LEVEL_BODY, LEVEL_AIR)
    levels = np.where(labels == 1, LEVEL_LV, levels)
    levels = np.where(labels == 2, LEVEL_MYO, levels)
    levels = np.where(labels == 3, LEVEL_RV, levels)
    smooth = np.clip(ndimage.gaussian_filter(levels, sigma=BLUR_SIGMA_PX), 0.0, 1.0)
    image = smooth**profile.intensity_gamma + profile.intensity_bias
    if profile.noise_sigma > 0:
        image = image + rng.normal(0.0, profile.noise_sigma, size=image.shape)
    return image.astype(np.float32)


def labels_valid(labels: np.ndarray) -> bool:
    counts = np.bincount(labels.ravel(), minlength=4)
    return all(counts[c] >= MIN_CLASS_PIXELS for c in FOREGROUND_CLASSES)


def render_slice(
    profile: VendorProfile,
    rng: np.random.Generator,
    canvas_size: int = 256,
    area: Optional[float] = None,
    slice_index: int = 0,
    slices: int = 1,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Render one slice for a fresh subject; returns (pixels, labels, pixel area)."""
    for _ in range(MAX_DRAW_ATTEMPTS):
        subject = _draw_subject(rng, profile)
        if area is not None:
            subject.area = float(area)
        pixels, labels = _render_subject_slice(subject, profile, rng, canvas_size, slice_index, slices)
        if labels_valid(labels):
            return pixels, labels, subject.area
    raise ConfigError(f"vendor {profile.tag}: could not draw a valid phantom on a {canvas_size}px canvas")


def _render_subject_slice(
    subject: _SubjectDraw,
    profile: VendorProfile,
    rng: np.random.Generator,
    canvas_size: int,
    slice_index: int,
    slices: int,
) -> Tuple[np.ndarray, np.ndarray]:
    side = math.sqrt(subject.area)
    phase = phase_for_slice(slice_index)
    scale, thickening = _slice_scale(slice_index, slices, phase)
    jitter = (float(rng.normal(0.0, 1.0)), float(rng.normal(0.0, 1.0)))
    labels = rasterize_labels(subject.heart, canvas_size, side, scale, thickening, jitter)
    body = _body_mask(canvas_size, side, subject.body_offset)
    pixels = render_intensity(labels, body, profile, rng)
    return pixels, labels


def _generate_subject(
    profile: VendorProfile,
    config: PhantomConfig,
    subject_id: str,
    rng: np.random.Generator,
) -> List[Tuple[int, Sample]]:
    for _ in range(MAX_DRAW_ATTEMPTS):
        subject = _draw_subject(rng, profile)
        side = math.sqrt(subject.area)
        slices: List[Tuple[int, Sample]] = []
        ok = True
        for slice_index in range(config.slices_per_subject):
            pixels, labels = _render_subject_slice(
                subject, profile, rng, config.canvas_size, slice_index, config.slices_per_subject
            )
            if not labels_valid(labels):
                ok = False
                break
            image = Image2D(
                pixels=pixels,
                spacing_mm=(side, side),
                vendor=profile.tag,
                subject_id=subject_id,
                phase=phase_for_slice(slice_index),
            )
            slices.append((slice_index, Sample(image=image, mask=SegMask(labels))))
        if ok:
            return slices
    raise ConfigError(f"vendor {profile.tag}: could not draw a valid phantom for subject {subject_id}")


def _write_split(
    config: PhantomConfig,
    out_dir: Path,
    split: str,
    subjects: int,
    stream: int,
    keep_masks_for_unlabeled: bool,
    logger: Logger,
    id_prefix: str = "",
) -> DatasetManifest:
    records: List[SampleRecord] = []
    for vendor_index, profile in enumerate(config.vendor_profiles):
        for subject_index in range(subjects):
            subject_id = f"{id_prefix}{profile.tag}{subject_index:03d}"
            rng = stream_rng(config.seed, stream, vendor_index, subject_index)
            for slice_index, sample in _generate_subject(profile, config, subject_id, rng):
                keep_mask = profile.labeled or keep_masks_for_unlabeled
                stored = sample if keep_mask else Sample(image=sample.image)
                directory = out_dir / split / profile.tag / subject_id / f"slice{slice_index:02d}"
                records.append(write_sample(stored, directory, slice_index=slice_index))
        logger.json({"type": "phantom_vendor", "split": split, "vendor": profile.tag, "subjects": subjects})
    return DatasetManifest(
        vendors=tuple(profile.tag for profile in config.vendor_profiles),
        records=sorted_records(records),
        held_out=tuple(profile.tag for profile in config.vendor_profiles if profile.held_out),
        root=out_dir,
    )


def generate_phantom_dataset(
    config: PhantomConfig,
    out_dir: Union[str, Path],
    logger: Optional[Logger] = None,
) -> DatasetManifest:
    """Write the training split (``manifest.json``) and the labelled evaluation split
    (``eval_manifest.json``) under ``out_dir``. Output bytes depend only on ``config``."""
    log = logger or null_logger("phantom")
    target = Path(out_dir)
    try:
        target.mkdir(parents=True, exist_ok=True)
        for split in ("train", "eval"):
            if (target / split).exists():
                shutil.rmtree(target / split)
    except OSError as err:
        raise OSError(f"output directory is not writable: {target}: {err}") from err

    manifest = _write_split(config, target, "train", config.subjects_per_vendor, 0, False, log)
    write_manifest(manifest, target / MANIFEST_FILE)
    if config.eval_subjects_per_vendor > 0:
        eval_manifest = _write_split(config, target, "eval", config.eval_subjects_per_vendor, 1, True, log, "eval-")
        write_manifest(eval_manifest, target / EVAL_MANIFEST_FILE)
    log.info("phantom", f"wrote {len(manifest)} training slices for vendors {', '.join(manifest.vendors)} to {target}")
    return manifest
