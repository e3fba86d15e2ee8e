"""Samples, masks, manifests and the on-disk sample format.

Sample directory layout (bit-exact):

    meta.json   UTF-8, keys height, width, row_mm, col_mm, vendor, subject_id, phase, has_mask
                (plus ``provenance`` for factor-generated samples)
    image.f32   row-major little-endian float32, height*width values
    mask.u8     optional, row-major uint8, height*width values in {0,1,2,3}

A dataset is a tree of such directories plus ``manifest.json`` whose records use URIs
relative to the manifest's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import DEFAULT_TARGET_SIZE, IMAGE_PAD_VALUE, MASK_PAD_VALUE
from .errors import InvalidLabelError, ManifestError, SampleFormatError, ShapeError
from .types import ManifestDict, MetaDict, ProvenanceDict, RecordDict
from .utils import dump_json

CLASS_NAMES = ("BG", "LV", "MYO", "RV")
FOREGROUND_CLASSES = (1, 2, 3)
NUM_CLASSES = len(CLASS_NAMES)

# Stored samples must be at least this large; in-memory intermediates may go down to MIN_WORKING_SIDE.
MIN_STORED_SIDE = 16
MIN_WORKING_SIDE = 8

NORMALIZE_EPS = 1e-8
NORMALIZE_CLIP = 3.0

IMAGE_FILE = "image.f32"
MASK_FILE = "mask.u8"
META_FILE = "meta.json"
MANIFEST_FILE = "manifest.json"


class Phase(str, Enum):
    ED = "ED"
    ES = "ES"
    OTHER = "other"

    @classmethod
    def parse(cls, value: Union[str, "Phase"]) -> "Phase":
        if isinstance(value, Phase):
            return value
        for member in cls:
            if member.value == value:
                return member
        raise ValueError(f"unknown phase {value!r}")


@dataclass(frozen=True, eq=False)
class Image2D:
    pixels: np.ndarray
    spacing_mm: Tuple[float, float]
    vendor: str
    subject_id: str
    phase: Phase = Phase.OTHER

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.float32)
        if pixels.ndim != 2:
            raise ShapeError(f"image must be 2D, got shape {pixels.shape}")
        if min(pixels.shape) < MIN_WORKING_SIDE:
            raise ShapeError(f"image {pixels.shape} is smaller than {MIN_WORKING_SIDE}x{MIN_WORKING_SIDE}")
        if not np.all(np.isfinite(pixels)):
            raise SampleFormatError("image contains non-finite pixel values")
        row_mm, col_mm = (float(v) for v in self.spacing_mm)
        if row_mm <= 0 or col_mm <= 0:
            raise SampleFormatError(f"spacing must be positive, got {(row_mm, col_mm)}")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "spacing_mm", (row_mm, col_mm))
        object.__setattr__(self, "phase", Phase.parse(self.phase))

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self.pixels.shape[0]), int(self.pixels.shape[1])

    @property
    def pixel_area(self) -> float:
        return self.spacing_mm[0] * self.spacing_mm[1]


@dataclass(frozen=True, eq=False)
class SegMask:
    labels: np.ndarray

    def __post_init__(self) -> None:
        raw = np.asarray(self.labels)
        if raw.ndim != 2:
            raise ShapeError(f"mask must be 2D, got shape {raw.shape}")
        if raw.size and (raw.min() < 0 or raw.max() >= NUM_CLASSES):
            bad = sorted(set(np.unique(raw).tolist()) - set(range(NUM_CLASSES)))
            raise InvalidLabelError(f"mask contains labels outside {{0,1,2,3}}: {bad}")
        object.__setattr__(self, "labels", raw.astype(np.uint8))

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self.labels.shape[0]), int(self.labels.shape[1])

    def label_set(self) -> set[int]:
        return set(np.unique(self.labels).tolist())


@dataclass(frozen=True, eq=False)
class Sample:
    image: Image2D
    mask: Optional[SegMask] = None
    provenance: Optional[ProvenanceDict] = None

    def __post_init__(self) -> None:
        if self.mask is not None and self.mask.shape != self.image.shape:
            raise ShapeError(f"mask shape {self.mask.shape} does not match image shape {self.image.shape}")

    @property
    def labeled(self) -> bool:
        return self.mask is not None


@dataclass(frozen=True)
class SampleRecord:
    image_uri: str
    vendor: str
    spacing_mm: Tuple[float, float]
    subject_id: str
    phase: Phase = Phase.OTHER
    slice_index: int = 0
    mask_uri: Optional[str] = None
    provenance: Optional[ProvenanceDict] = field(default=None, compare=False, hash=False)

    @property
    def labeled(self) -> bool:
        return self.mask_uri is not None

    @property
    def key(self) -> str:
        return f"{self.subject_id}/{self.phase.value}/{self.slice_index}"

    @property
    def pixel_area(self) -> float:
        return float(self.spacing_mm[0]) * float(self.spacing_mm[1])

    def sort_key(self) -> Tuple[str, str, int]:
        return (self.subject_id, self.phase.value, self.slice_index)


@dataclass(frozen=True)
class DatasetManifest:
    vendors: Tuple[str, ...]
    records: Tuple[SampleRecord, ...]
    held_out: Tuple[str, ...] = ()
    root: Optional[Path] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def labeled_records(self) -> List[SampleRecord]:
        return [record for record in self.records if record.labeled]

    def unlabeled_records(self) -> List[SampleRecord]:
        return [record for record in self.records if not record.labeled]

    def by_vendor(self) -> Dict[str, List[SampleRecord]]:
        groups: Dict[str, List[SampleRecord]] = {vendor: [] for vendor in self.vendors}
        for record in self.records:
            groups.setdefault(record.vendor, []).append(record)
        return groups

    def select(
        self,
        vendors: Optional[Iterable[str]] = None,
        exclude_vendors: Iterable[str] = (),
    ) -> "DatasetManifest":
        keep = set(vendors) if vendors is not None else set(self.vendors)
        keep -= set(exclude_vendors)
        records = tuple(record for record in self.records if record.vendor in keep)
        return replace(
            self,
            vendors=tuple(vendor for vendor in self.vendors if vendor in keep),
            records=records,
            held_out=tuple(vendor for vendor in self.held_out if vendor in keep),
        )

    def training_view(self, include_held_out: bool = False) -> "DatasetManifest":
        """Manifest without held-out vendors unless explicitly requested."""
        if include_held_out:
            return self
        return self.select(exclude_vendors=self.held_out)


def sorted_records(records: Iterable[SampleRecord]) -> Tuple[SampleRecord, ...]:
    return tuple(sorted(records, key=SampleRecord.sort_key))


# ---------------------------------------------------------------------------
# Manifest I/O


def record_from_dict(raw: RecordDict, index: int, vendors: Sequence[str], root: Path) -> SampleRecord:
    if not isinstance(raw, dict):
        raise ManifestError("record must be an object", index)
    try:
        image_uri = str(raw["image_uri"])
        vendor = str(raw["vendor"])
        spacing = tuple(float(v) for v in raw["spacing_mm"])
        subject_id = str(raw["subject_id"])
        phase = Phase.parse(raw.get("phase", "other"))
        slice_index = int(raw.get("slice_index", 0))
    except KeyError as err:
        raise ManifestError(f"malformed record: missing key {err.args[0]!r}", index) from err
    except (TypeError, ValueError) as err:
        raise ManifestError(f"malformed record: {err}", index) from err
    if len(spacing) != 2 or min(spacing) <= 0:
        raise ManifestError(f"malformed record: spacing_mm must be two positive values, got {spacing}", index)
    if vendor not in vendors:
        raise ManifestError(f"vendor {vendor!r} is not declared in the manifest", index)

    image_path = _resolve(root, image_uri)
    if not image_path.is_file():
        raise ManifestError(f"dangling image_uri {image_uri!r}", index)
    mask_uri = raw.get("mask_uri")
    mask_path: Optional[Path] = None
    if mask_uri is not None:
        mask_path = _resolve(root, str(mask_uri))
        if not mask_path.is_file():
            raise ManifestError(f"dangling mask_uri {mask_uri!r}", index)

    provenance = raw.get("provenance")
    return SampleRecord(
        image_uri=str(image_path),
        vendor=vendor,
        spacing_mm=(spacing[0], spacing[1]),
        subject_id=subject_id,
        phase=phase,
        slice_index=slice_index,
        mask_uri=str(mask_path) if mask_path is not None else None,
        provenance=dict(provenance) if provenance else None,  # type: ignore[arg-type]
    )


def record_to_dict(record: SampleRecord, root: Optional[Path] = None) -> RecordDict:
    raw: RecordDict = {
        "image_uri": _relative(record.image_uri, root),
        "vendor": record.vendor,
        "spacing_mm": [float(record.spacing_mm[0]), float(record.spacing_mm[1])],
        "subject_id": record.subject_id,
        "phase": record.phase.value,
        "slice_index": int(record.slice_index),
    }
    if record.mask_uri is not None:
        raw["mask_uri"] = _relative(record.mask_uri, root)
    if record.provenance:
        raw["provenance"] = dict(record.provenance)  # type: ignore[typeddict-item]
    return raw


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Load and validate a manifest; records come back sorted with absolute URIs."""
    manifest_path = Path(path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_FILE
    if not manifest_path.is_file():
        raise ManifestError(f"manifest not found: {manifest_path}")
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ManifestError(f"manifest is not valid JSON: {err}") from err
    if not isinstance(raw, dict) or not isinstance(raw.get("vendors"), list) or not isinstance(raw.get("records"), list):
        raise ManifestError("manifest must be an object with 'vendors' and 'records' arrays")

    vendors = tuple(str(vendor) for vendor in raw["vendors"])
    held_out = tuple(str(vendor) for vendor in raw.get("held_out", []))
    unknown = sorted(set(held_out) - set(vendors))
    if unknown:
        raise ManifestError(f"held_out vendors not declared: {unknown}")

    root = manifest_path.parent.resolve()
    records = [record_from_dict(item, index, vendors, root) for index, item in enumerate(raw["records"])]
    return DatasetManifest(vendors=vendors, records=sorted_records(records), held_out=held_out, root=root)


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    target = Path(path)
    if target.suffix != ".json":
        target = target / MANIFEST_FILE
    target.parent.mkdir(parents=True, exist_ok=True)
    root = target.parent.resolve()
    payload: ManifestDict = {
        "vendors": list(manifest.vendors),
        "held_out": list(manifest.held_out),
        "records": [record_to_dict(record, root) for record in sorted_records(manifest.records)],
    }
    target.write_text(dump_json(payload), encoding="utf8")
    return target


def _resolve(root: Path, uri: str) -> Path:
    candidate = Path(uri)
    return candidate if candidate.is_absolute() else (root / candidate).resolve()


def _relative(uri: str, root: Optional[Path]) -> str:
    if root is None:
        return uri
    path = Path(uri)
    if not path.is_absolute():
        return path.as_posix()
    return Path(os.path.relpath(path.resolve(), root)).as_posix()


# ---------------------------------------------------------------------------
# Sample I/O


def read_sample(record: SampleRecord) -> Sample:
    image_path = Path(record.image_uri)
    meta_path = image_path.parent / META_FILE
    try:
        meta: MetaDict = json.loads(meta_path.read_text(encoding="utf8"))
        height, width = int(meta["height"]), int(meta["width"])
        spacing = (float(meta["row_mm"]), float(meta["col_mm"]))
    except FileNotFoundError as err:
        raise SampleFormatError(f"missing {META_FILE} next to {image_path}") from err
    except (KeyError, TypeError, ValueError) as err:
        raise SampleFormatError(f"corrupt header {meta_path}: {err}") from err
    if height < MIN_STORED_SIDE or width < MIN_STORED_SIDE:
        raise SampleFormatError(f"corrupt header {meta_path}: stored samples must be at least 16x16")

    payload = image_path.read_bytes()
    if len(payload) != height * width * 4:
        raise SampleFormatError(
            f"corrupt header {meta_path}: {height}x{width} needs {height * width * 4} bytes, {image_path.name} has {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype="<f4").reshape(height, width).astype(np.float32)

    mask: Optional[SegMask] = None
    if record.mask_uri is not None:
        mask_path = Path(record.mask_uri)
        mask_bytes = mask_path.read_bytes()
        if len(mask_bytes) != height * width:
            raise ShapeError(
                f"dimension mismatch: {mask_path.name} has {len(mask_bytes)} values, image is {height}x{width}"
            )
        mask = SegMask(np.frombuffer(mask_bytes, dtype=np.uint8).reshape(height, width))

    image = Image2D(
        pixels=pixels,
        spacing_mm=spacing,
        vendor=str(meta.get("vendor", record.vendor)),
        subject_id=str(meta.get("subject_id", record.subject_id)),
        phase=Phase.parse(meta.get("phase", record.phase.value)),
    )
    provenance = meta.get("provenance") or record.provenance
    return Sample(image=image, mask=mask, provenance=provenance)


def write_sample(sample: Sample, directory: Union[str, Path], slice_index: int = 0) -> SampleRecord:
    """Write one sample directory and return its record (absolute URIs)."""
    height, width = sample.image.shape
    if height < MIN_STORED_SIDE or width < MIN_STORED_SIDE:
        raise ShapeError(f"stored samples must be at least 16x16, got {height}x{width}")
    target = Path(directory)
    target.mkdir(parents=True, exist_ok=True)
    meta: MetaDict = {
        "height": height,
        "width": width,
        "row_mm": float(sample.image.spacing_mm[0]),
        "col_mm": float(sample.image.spacing_mm[1]),
        "vendor": sample.image.vendor,
        "subject_id": sample.image.subject_id,
        "phase": sample.image.phase.value,
        "has_mask": sample.mask is not None,
    }
    if sample.provenance:
        meta["provenance"] = dict(sample.provenance)  # type: ignore[typeddict-item]
    (target / META_FILE).write_text(dump_json(meta), encoding="utf8")
    image_path = target / IMAGE_FILE
    image_path.write_bytes(np.ascontiguousarray(sample.image.pixels, dtype="<f4").tobytes())
    mask_path: Optional[Path] = None
    if sample.mask is not None:
        mask_path = target / MASK_FILE
        mask_path.write_bytes(np.ascontiguousarray(sample.mask.labels, dtype=np.uint8).tobytes())
    return SampleRecord(
        image_uri=str(image_path.resolve()),
        vendor=sample.image.vendor,
        spacing_mm=sample.image.spacing_mm,
        subject_id=sample.image.subject_id,
        phase=sample.image.phase,
        slice_index=slice_index,
        mask_uri=str(mask_path.resolve()) if mask_path is not None else None,
        provenance=sample.provenance,
    )


# ---------------------------------------------------------------------------
# Preprocessing


def normalize_pixels(pixels: np.ndarray) -> np.ndarray:
    """Per-image z-score (population std), clip to +-3, map linearly to [-1, 1]."""
    values = np.asarray(pixels, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise SampleFormatError("cannot normalize an image with non-finite values")
    if values.size == 0 or np.ptp(values) == 0:
        return np.zeros(values.shape, dtype=np.float32)
    z = (values - values.mean()) / (values.std() + NORMALIZE_EPS)
    return (np.clip(z, -NORMALIZE_CLIP, NORMALIZE_CLIP) / NORMALIZE_CLIP).astype(np.float32)


def normalize_intensity(image: Image2D) -> Image2D:
    return replace(image, pixels=normalize_pixels(image.pixels))


def crop_or_pad_array(array: np.ndarray, target: int, fill: float) -> np.ndarray:
    out = array
    for axis in (0, 1):
        dim = out.shape[axis]
        if dim >= target:
            start = (dim - target) // 2
            index = [slice(None), slice(None)]
            index[axis] = slice(start, start + target)
            out = out[tuple(index)]
        else:
            before = (target - dim) // 2
            pad = [(0, 0), (0, 0)]
            pad[axis] = (before, target - dim - before)
            out = np.pad(out, pad, mode="constant", constant_values=fill)
    return np.ascontiguousarray(out)


def center_crop_or_pad(image: Image2D, mask: Optional[SegMask] = None, target: int = DEFAULT_TARGET_SIZE) -> Sample:
    """Center-crop (offset floor((dim-target)/2)) or symmetrically pad each axis to ``target``."""
    pixels = crop_or_pad_array(image.pixels, target, IMAGE_PAD_VALUE)
    new_mask = None
    if mask is not None:
        new_mask = SegMask(crop_or_pad_array(mask.labels, target, MASK_PAD_VALUE))
    return Sample(image=replace(image, pixels=pixels), mask=new_mask)


def preprocess(sample: Sample, target: int = DEFAULT_TARGET_SIZE, normalize: bool = True) -> Sample:
    """Normalize intensities then crop/pad; the deterministic evaluation path.

    ``normalize=False`` keeps pixels as stored (factor-generated images are already decoder output).
    """
    image = normalize_intensity(sample.image) if normalize else sample.image
    cropped = center_crop_or_pad(image, sample.mask, target)
    return replace(cropped, provenance=sample.provenance)
