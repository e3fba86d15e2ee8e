"""Typed structures for the JSON and CSV artefacts sdaug reads and writes."""

from __future__ import annotations

from typing import List, Literal, TypedDict

PhaseName = Literal["ED", "ES", "other"]
TrainMode = Literal["FS", "SS"]
ModelKind = Literal["UNET", "SDNET"]
BatchKind = Literal["L", "U"]


class ProvenanceDict(TypedDict):
    anatomy_vendor: str
    anatomy_source: str
    modality_vendor: str
    modality_source: str
    bank_fingerprint: str


class _RecordRequired(TypedDict):
    image_uri: str
    vendor: str
    spacing_mm: List[float]
    subject_id: str
    phase: PhaseName
    slice_index: int


class RecordDict(_RecordRequired, total=False):
    mask_uri: str
    provenance: ProvenanceDict


class ManifestDict(TypedDict):
    vendors: List[str]
    held_out: List[str]
    records: List[RecordDict]


class _MetaRequired(TypedDict):
    height: int
    width: int
    row_mm: float
    col_mm: float
    vendor: str
    subject_id: str
    phase: PhaseName
    has_mask: bool


class MetaDict(_MetaRequired, total=False):
    provenance: ProvenanceDict


class HistogramRow(TypedDict):
    vendor: str
    bin_lo: float
    bin_hi: float
    count: int


ReportRow = TypedDict("ReportRow", {"model": str, "vendor": str, "class": str, "dice": float, "n": int})


class EpochRow(TypedDict):
    epoch: int
    lr: float
    rec: float
    zrec: float
    dice: float
    focal: float
    val_dice: float
