"""Resolution augmentation: resample to a random pixel area, then center-crop."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .config import DEFAULT_TARGET_SIZE, RA_AREA_HI, RA_AREA_LO
from .data import (
    MIN_WORKING_SIDE,
    DatasetManifest,
    Sample,
    SampleRecord,
    SegMask,
    center_crop_or_pad,
    normalize_intensity,
    read_sample,
    sorted_records,
    write_manifest,
    write_sample,
)
from .errors import ConfigError, DegenerateZoomError, ManifestError
from .logger import Logger, null_logger
from .types import HistogramRow
from .utils import round_half_away, stream_rng, write_csv

HISTOGRAM_HEADER = ("vendor", "bin_lo", "bin_hi", "count")
DEFAULT_BIN_EDGES = tuple(round(0.8 + 0.1 * step, 10) for step in range(21))


@dataclass(frozen=True)
class RAConfig:
    area_lo: float = RA_AREA_LO
    area_hi: float = RA_AREA_HI
    target_size: int = DEFAULT_TARGET_SIZE

    def __post_init__(self) -> None:
        if not (0 < self.area_lo <= self.area_hi):
            raise ConfigError(f"RA range must satisfy 0 < lo <= hi, got {(self.area_lo, self.area_hi)}")
        if self.target_size < MIN_WORKING_SIDE:
            raise ConfigError(f"RA target size must be at least {MIN_WORKING_SIDE}")


def area_from_uniform(u: float, cfg: RAConfig) -> float:
    """Map a uniform variate in [0, 1] to a pixel area, uniform in area."""
    return cfg.area_lo + float(u) * (cfg.area_hi - cfg.area_lo)


def sample_target_area(rng: np.random.Generator, cfg: RAConfig) -> float:
    return area_from_uniform(rng.random(), cfg)


def zoom_geometry(shape: Sequence[int], spacing_mm: Sequence[float], target_area: float) -> tuple[float, int, int]:
    """Linear zoom factor and output dims for resampling to ``target_area`` mm^2 per pixel."""
    if target_area <= 0:
        raise DegenerateZoomError(f"target area must be positive, got {target_area}")
    area0 = float(spacing_mm[0]) * float(spacing_mm[1])
    factor = math.sqrt(area0 / target_area)
    height = max(1, round_half_away(shape[0] * factor))
    width = max(1, round_half_away(shape[1] * factor))
    return factor, height, width


def resample_to_area(sample: Sample, target_area: float) -> Sample:
    """Bilinear resample of the image (nearest for the mask) so one pixel covers ``target_area``."""
    image = sample.image
    factor, height, width = zoom_geometry(image.shape, image.spacing_mm, target_area)
    if height < MIN_WORKING_SIDE or width < MIN_WORKING_SIDE:
        raise DegenerateZoomError(
            f"zoom by {factor:.4f} turns {image.shape[0]}x{image.shape[1]} into {height}x{width}, below 8x8"
        )
    spacing = (image.spacing_mm[0] / factor, image.spacing_mm[1] / factor)
    if (height, width) == image.shape:
        return replace(sample, image=replace(image, spacing_mm=spacing))

    zoom = (height / image.shape[0], width / image.shape[1])
    pixels = ndimage.zoom(image.pixels.astype(np.float64), zoom, order=1, mode="nearest", grid_mode=True)
    mask = None
    if sample.mask is not None:
        mask = SegMask(ndimage.zoom(sample.mask.labels, zoom, order=0, mode="nearest", grid_mode=True))
    return replace(sample, image=replace(image, pixels=pixels.astype(np.float32), spacing_mm=spacing), mask=mask)


def apply_ra(sample: Sample, rng: np.random.Generator, cfg: Optional[RAConfig] = None) -> Sample:
    """Random pixel area, resample, then center-crop/pad to the target size."""
    config = cfg or RAConfig()
    resampled = resample_to_area(sample, sample_target_area(rng, config))
    cropped = center_crop_or_pad(resampled.image, resampled.mask, config.target_size)
    return replace(cropped, provenance=sample.provenance)


def resolution_histogram(
    manifest: DatasetManifest, bin_edges: Sequence[float] = DEFAULT_BIN_EDGES
) -> List[HistogramRow]:
    """Per-vendor record counts per pixel-area bin. Out-of-range areas land in the edge bins."""
    if len(manifest) == 0:
        raise ManifestError("cannot build a histogram of an empty manifest")
    edges = np.asarray(sorted(float(edge) for edge in bin_edges), dtype=np.float64)
    if edges.size < 2:
        raise ConfigError("histogram needs at least two bin edges")
    groups: Dict[str, List[SampleRecord]] = manifest.by_vendor()
    rows: List[HistogramRow] = []
    for vendor in sorted(groups):
        areas = np.asarray([record.pixel_area for record in groups[vendor]], dtype=np.float64)
        clipped = np.clip(areas, edges[0], edges[-1])
        counts, _ = np.histogram(clipped, bins=edges)
        for index, count in enumerate(counts):
            rows.append(
                {
                    "vendor": vendor,
                    "bin_lo": float(edges[index]),
                    "bin_hi": float(edges[index + 1]),
                    "count": int(count),
                }
            )
    return rows


def write_histogram_csv(rows: Sequence[HistogramRow], path: Union[str, Path]) -> Path:
    return write_csv(path, HISTOGRAM_HEADER, rows)


def augment_dataset_ra(
    manifest: DatasetManifest,
    out_dir: Union[str, Path],
    seed: int,
    copies: int = 1,
    cfg: Optional[RAConfig] = None,
    logger: Optional[Logger] = None,
) -> DatasetManifest:
    """Write ``copies`` RA draws of every record (normalized, cropped) as a new dataset."""
    if copies < 1:
        raise ConfigError("copies must be >= 1")
    config = cfg or RAConfig()
    log = logger or null_logger("augment-ra")
    target = Path(out_dir)
    records: List[SampleRecord] = []
    for copy in range(copies):
        for index, record in enumerate(manifest.records):
            sample = read_sample(record)
            normalized = replace(sample, image=normalize_intensity(sample.image))
            augmented = apply_ra(normalized, stream_rng(seed, copy, index), config)
            directory = target / "samples" / f"{copy:02d}" / record.vendor / f"{index:06d}"
            written = write_sample(augmented, directory, slice_index=record.slice_index)
            records.append(replace(written, subject_id=record.subject_id, slice_index=copy * 1_000_000 + record.slice_index))
    result = DatasetManifest(vendors=manifest.vendors, records=sorted_records(records), held_out=manifest.held_out, root=target)
    write_manifest(result, target)
    log.info("augment ra", f"wrote {len(records)} resampled samples to {target}")
    return result
