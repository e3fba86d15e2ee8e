"""Factor-based augmentation: factor banks, cross-vendor mixing and label inheritance.

Bank file layout (``.sdfb``), all integers little-endian:

    offset 0   4 bytes   magic ``SDFB``
    offset 4   uint32    format version
    offset 8   uint32    header length L
    offset 12  L bytes   UTF-8 JSON header (fingerprint, arch, vendors, counts, entries)
    offset 12+L          payload; every entry's ``offset``/``length`` is relative to here

Anatomy entries store ``np.packbits`` of the C x H x W binary factor and, when labeled, the
H x W uint8 mask; modality entries store the code as float32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import torch

from .config import DEFAULT_TARGET_SIZE
from .data import (
    DatasetManifest,
    Image2D,
    Phase,
    Sample,
    SampleRecord,
    SegMask,
    normalize_intensity,
    preprocess,
    read_sample,
    sorted_records,
    write_manifest,
    write_sample,
)
from .errors import CheckpointMismatchError, ConfigError, EmptyPoolError, SampleFormatError
from .logger import Logger, null_logger
from .resolution import RAConfig, apply_ra
from .sdnet import SDNet, anatomy_encode, decode, load_checkpoint, modality_encode, model_fingerprint
from .types import ProvenanceDict
from .utils import stream_rng

BANK_MAGIC = b"SDFB"
BANK_VERSION = 1
BANK_SUFFIX = ".sdfb"


@dataclass(frozen=True, eq=False)
class AnatomyEntry:
    vendor: str
    source: str
    labeled: bool
    channels: np.ndarray  # (C, H, W) uint8 in {0, 1}
    mask: Optional[np.ndarray] = None  # (H, W) uint8, preprocessed
    spacing_mm: Tuple[float, float] = (1.0, 1.0)
    phase: Phase = Phase.OTHER

    def __post_init__(self) -> None:
        if self.labeled != (self.mask is not None):
            raise ValueError(f"anatomy entry {self.source}: labeled flag and mask disagree")


@dataclass(frozen=True, eq=False)
class ModalityEntry:
    vendor: str
    source: str
    z: np.ndarray  # (dim,) float32


@dataclass
class FactorBank:
    fingerprint: str
    arch: Dict[str, Any]
    anatomy: Dict[str, List[AnatomyEntry]] = field(default_factory=dict)
    modality: Dict[str, List[ModalityEntry]] = field(default_factory=dict)

    @property
    def vendors(self) -> List[str]:
        return list(dict.fromkeys([*self.anatomy, *self.modality]))

    def anatomy_entries(self) -> List[AnatomyEntry]:
        return [entry for entries in self.anatomy.values() for entry in entries]

    def modality_entries(self) -> List[ModalityEntry]:
        return [entry for entries in self.modality.values() for entry in entries]

    def counts(self) -> Dict[str, Dict[str, int]]:
        return {
            vendor: {
                "anatomy": len(self.anatomy.get(vendor, [])),
                "labeled": sum(entry.labeled for entry in self.anatomy.get(vendor, [])),
                "modality": len(self.modality.get(vendor, [])),
            }
            for vendor in self.vendors
        }

    def labeled_fraction(self) -> float:
        entries = self.anatomy_entries()
        return sum(entry.labeled for entry in entries) / len(entries) if entries else 0.0


def _require_sdnet(checkpoint: Union[str, Path, SDNet]) -> SDNet:
    model = checkpoint if isinstance(checkpoint, torch.nn.Module) else load_checkpoint(checkpoint)[0]
    if not isinstance(model, SDNet):
        raise CheckpointMismatchError("factor extraction and decoding need an SDNet checkpoint")
    return model


def extract_factors(
    checkpoint: Union[str, Path, SDNet],
    manifest: DatasetManifest,
    target_size: int = DEFAULT_TARGET_SIZE,
    use_ra: bool = False,
    seed: int = 0,
    batch_size: int = 8,
    logger: Optional[Logger] = None,
) -> FactorBank:
    """Encode every record in inference mode and group the factors by vendor."""
    log = logger or null_logger("factors")
    model = _require_sdnet(checkpoint)
    bank = FactorBank(fingerprint=model_fingerprint(model), arch=model.arch.to_dict())
    ra = RAConfig(target_size=target_size)
    records = list(manifest.records)
    stop = log.start_spinner("extracting factors")
    try:
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            samples = []
            for offset, record in enumerate(chunk):
                sample = read_sample(record)
                if use_ra:
                    normalized = replace(sample, image=normalize_intensity(sample.image))
                    samples.append(apply_ra(normalized, stream_rng(seed, start + offset), ra))
                else:
                    samples.append(preprocess(sample, target_size))
            images = torch.from_numpy(np.stack([sample.image.pixels for sample in samples]))[:, None]
            anatomy = anatomy_encode(model, images).channels.numpy().astype(np.uint8)
            codes = modality_encode(model, images).z.numpy().astype(np.float32)
            for record, sample, channels, z in zip(chunk, samples, anatomy, codes):
                mask = sample.mask.labels.copy() if sample.mask is not None else None
                bank.anatomy.setdefault(record.vendor, []).append(
                    AnatomyEntry(
                        vendor=record.vendor,
                        source=record.key,
                        labeled=mask is not None,
                        channels=channels,
                        mask=mask,
                        spacing_mm=sample.image.spacing_mm,
                        phase=record.phase,
                    )
                )
                bank.modality.setdefault(record.vendor, []).append(ModalityEntry(record.vendor, record.key, z))
    finally:
        stop()
    log.info("factors", f"extracted {len(records)} anatomy/modality pairs over {len(bank.vendors)} vendors")
    return bank


# ---------------------------------------------------------------------------
# Bank file


def save_bank(bank: FactorBank, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    chunks: List[bytes] = []
    offset = 0

    def put(data: bytes) -> Tuple[int, int]:
        nonlocal offset
        chunks.append(data)
        start = offset
        offset += len(data)
        return start, len(data)

    anatomy_meta = []
    for entry in bank.anatomy_entries():
        data_offset, data_length = put(np.packbits(entry.channels.astype(np.uint8).reshape(-1)).tobytes())
        meta: Dict[str, Any] = {
            "vendor": entry.vendor,
            "source": entry.source,
            "labeled": entry.labeled,
            "shape": list(entry.channels.shape),
            "spacing_mm": [float(entry.spacing_mm[0]), float(entry.spacing_mm[1])],
            "phase": entry.phase.value,
            "offset": data_offset,
            "length": data_length,
        }
        if entry.mask is not None:
            meta["mask_offset"], meta["mask_length"] = put(np.ascontiguousarray(entry.mask, dtype=np.uint8).tobytes())
        anatomy_meta.append(meta)
    modality_meta = []
    for entry in bank.modality_entries():
        data_offset, data_length = put(np.ascontiguousarray(entry.z, dtype="<f4").tobytes())
        modality_meta.append(
            {"vendor": entry.vendor, "source": entry.source, "dim": int(entry.z.size), "offset": data_offset, "length": data_length}
        )
    header = {
        "fingerprint": bank.fingerprint,
        "arch": bank.arch,
        "vendors": bank.vendors,
        "counts": bank.counts(),
        "anatomy": anatomy_meta,
        "modality": modality_meta,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf8")
    prefix = BANK_MAGIC + np.array([BANK_VERSION, len(header_bytes)], dtype="<u4").tobytes()
    target.write_bytes(prefix + header_bytes + b"".join(chunks))
    return target


def load_bank(path: Union[str, Path]) -> FactorBank:
    source = Path(path)
    raw = source.read_bytes()
    if len(raw) < 12 or raw[:4] != BANK_MAGIC:
        raise SampleFormatError(f"{source} is not a factor bank")
    version, header_length = (int(v) for v in np.frombuffer(raw[4:12], dtype="<u4"))
    if version != BANK_VERSION:
        raise SampleFormatError(f"{source}: unsupported bank version {version}")
    try:
        header = json.loads(raw[12 : 12 + header_length].decode("utf8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise SampleFormatError(f"{source}: corrupt bank header: {err}") from err
    payload = memoryview(raw)[12 + header_length :]

    def take(offset: int, length: int) -> bytes:
        if offset + length > len(payload):
            raise SampleFormatError(f"{source}: truncated payload")
        return bytes(payload[offset : offset + length])

    bank = FactorBank(fingerprint=header["fingerprint"], arch=header["arch"])
    for meta in header["anatomy"]:
        shape = tuple(meta["shape"])
        bits = np.frombuffer(take(meta["offset"], meta["length"]), dtype=np.uint8)
        channels = np.unpackbits(bits, count=int(np.prod(shape))).reshape(shape)
        mask = None
        if meta["labeled"]:
            mask = np.frombuffer(take(meta["mask_offset"], meta["mask_length"]), dtype=np.uint8).reshape(shape[1:]).copy()
        bank.anatomy.setdefault(meta["vendor"], []).append(
            AnatomyEntry(
                vendor=meta["vendor"],
                source=meta["source"],
                labeled=bool(meta["labeled"]),
                channels=channels,
                mask=mask,
                spacing_mm=(float(meta["spacing_mm"][0]), float(meta["spacing_mm"][1])),
                phase=Phase.parse(meta["phase"]),
            )
        )
    for meta in header["modality"]:
        z = np.frombuffer(take(meta["offset"], meta["length"]), dtype="<f4").astype(np.float32)
        bank.modality.setdefault(meta["vendor"], []).append(ModalityEntry(meta["vendor"], meta["source"], z))
    return bank


# ---------------------------------------------------------------------------
# Generation


def verify_bank(bank: FactorBank, model: SDNet) -> None:
    if model_fingerprint(model) != bank.fingerprint:
        raise CheckpointMismatchError("factor bank was extracted with a different checkpoint")


def _pick(rng: np.random.Generator, options: List[Any]) -> Any:
    return options[int(rng.integers(len(options)))]


def fa_sample(
    bank: FactorBank,
    rng: np.random.Generator,
    checkpoint: Union[str, Path, SDNet],
    same_vendor_control: bool = False,
    verify: bool = True,
) -> Sample:
    """Decode a random anatomy factor with a random modality factor; the mask follows the anatomy."""
    model = _require_sdnet(checkpoint)
    if verify:
        verify_bank(bank, model)
    anatomy_vendors = [vendor for vendor, entries in bank.anatomy.items() if entries]
    modality_vendors = [vendor for vendor, entries in bank.modality.items() if entries]
    if not anatomy_vendors or not modality_vendors:
        raise EmptyPoolError("factor bank has no anatomy or no modality entries")
    anatomy_vendor = _pick(rng, anatomy_vendors)
    anatomy = _pick(rng, bank.anatomy[anatomy_vendor])
    if same_vendor_control:
        if not bank.modality.get(anatomy_vendor):
            raise EmptyPoolError(f"no modality entries for vendor {anatomy_vendor}")
        modality_vendor = anatomy_vendor
    else:
        modality_vendor = _pick(rng, modality_vendors)
    modality = _pick(rng, bank.modality[modality_vendor])

    channels = torch.from_numpy(anatomy.channels.astype(np.float32))[None]
    z = torch.from_numpy(modality.z.astype(np.float32))[None]
    pixels = decode(model, channels, z)[0, 0].numpy().astype(np.float32)
    provenance: ProvenanceDict = {
        "anatomy_vendor": anatomy_vendor,
        "anatomy_source": anatomy.source,
        "modality_vendor": modality_vendor,
        "modality_source": modality.source,
        "bank_fingerprint": bank.fingerprint,
    }
    image = Image2D(
        pixels=pixels,
        spacing_mm=anatomy.spacing_mm,
        vendor=f"{anatomy_vendor}:{modality_vendor}",
        subject_id="fa",
        phase=anatomy.phase,
    )
    mask = SegMask(anatomy.mask.copy()) if anatomy.labeled else None
    return Sample(image=image, mask=mask, provenance=provenance)


def generate_fa_dataset(
    bank: FactorBank,
    checkpoint: Union[str, Path, SDNet],
    n: int,
    seed: int,
    out_dir: Union[str, Path],
    same_vendor_control: bool = False,
    logger: Optional[Logger] = None,
) -> DatasetManifest:
    """Write ``n`` generated samples plus a manifest; sample ``i`` uses rng stream (seed, i)."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    log = logger or null_logger("augment-fa")
    model = _require_sdnet(checkpoint)
    verify_bank(bank, model)
    target = Path(out_dir)
    records: List[SampleRecord] = []
    stop = log.start_spinner(f"generating {n} samples")
    try:
        for index in range(n):
            sample = fa_sample(bank, stream_rng(seed, index), model, same_vendor_control, verify=False)
            sample = replace(sample, image=replace(sample.image, subject_id=f"fa-{index:06d}"))
            records.append(write_sample(sample, target / "samples" / f"{index:06d}", slice_index=index))
    finally:
        stop()
    vendors = tuple(sorted({record.vendor for record in records}))
    manifest = DatasetManifest(vendors=vendors, records=sorted_records(records), root=target)
    write_manifest(manifest, target)
    labeled = sum(record.labeled for record in records)
    log.info("augment fa", f"wrote {n} samples ({labeled} labeled) to {target}")
    return manifest
