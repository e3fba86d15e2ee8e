"""Prediction and per-vendor Dice reporting."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from rich.console import Console
from rich.table import Table

from .config import DEFAULT_TARGET_SIZE
from .data import CLASS_NAMES, FOREGROUND_CLASSES, DatasetManifest, Image2D, SegMask, preprocess, read_sample
from .errors import MissingMaskError, ShapeError
from .logger import Logger, null_logger
from .sdnet import as_batch, evaluating, load_checkpoint
from .types import ReportRow
from .utils import read_csv, write_csv

REPORT_HEADER = ("model", "vendor", "class", "dice", "n")
FOREGROUND_NAMES = tuple(CLASS_NAMES[c] for c in FOREGROUND_CLASSES)

ModelSource = Union[str, Path, torch.nn.Module]


def _labels(mask: Union[SegMask, np.ndarray]) -> np.ndarray:
    return mask.labels if isinstance(mask, SegMask) else np.asarray(mask)


def _as_model(source: ModelSource) -> torch.nn.Module:
    if isinstance(source, torch.nn.Module):
        return source
    model, _ = load_checkpoint(source)
    return model


def dice_coefficient(pred: Union[SegMask, np.ndarray], gt: Union[SegMask, np.ndarray], class_id: int) -> float:
    """2|P & G| / (|P| + |G|) for one class; 1.0 when both are empty."""
    if class_id not in FOREGROUND_CLASSES:
        raise ValueError(f"class_id must be one of {FOREGROUND_CLASSES}, got {class_id}")
    p, g = _labels(pred), _labels(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    p_c = p == class_id
    g_c = g == class_id
    total = int(p_c.sum()) + int(g_c.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p_c, g_c).sum()) / total


def class_dice(pred: Union[SegMask, np.ndarray], gt: Union[SegMask, np.ndarray]) -> Dict[str, float]:
    return {CLASS_NAMES[c]: dice_coefficient(pred, gt, c) for c in FOREGROUND_CLASSES}


def mean_foreground_dice(pred: Union[SegMask, np.ndarray], gt: Union[SegMask, np.ndarray]) -> float:
    return float(np.mean(list(class_dice(pred, gt).values())))


def predict_masks(model: ModelSource, images: Sequence[Image2D]) -> List[SegMask]:
    """Argmax over class probabilities; ties resolve to the lowest class index."""
    net = _as_model(model)
    batch = torch.cat([as_batch(image) for image in images])
    with evaluating(net):
        probs = net.segment_probs(batch).numpy()
    return [SegMask(labels.astype(np.uint8)) for labels in probs.argmax(axis=1)]


def predict_mask(model: ModelSource, image: Image2D) -> SegMask:
    return predict_masks(model, [image])[0]


@dataclass
class VendorScore:
    model: str
    vendor: str
    dice: Dict[str, float]
    n: int

    @property
    def mean(self) -> float:
        return float(np.mean([self.dice[name] for name in FOREGROUND_NAMES]))


@dataclass
class EvalReport:
    rows: List[VendorScore] = field(default_factory=list)

    @property
    def models(self) -> List[str]:
        return list(dict.fromkeys(row.model for row in self.rows))

    @property
    def vendors(self) -> List[str]:
        return list(dict.fromkeys(row.vendor for row in self.rows))

    def get(self, model: str, vendor: str) -> Optional[VendorScore]:
        for row in self.rows:
            if row.model == model and row.vendor == vendor:
                return row
        return None

    def csv_rows(self) -> List[ReportRow]:
        return [
            {"model": row.model, "vendor": row.vendor, "class": name, "dice": row.dice[name], "n": row.n}
            for row in self.rows
            for name in FOREGROUND_NAMES
        ]

    def write_csv(self, path: Union[str, Path]) -> Path:
        return write_csv(path, REPORT_HEADER, self.csv_rows())

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> "EvalReport":
        grouped: Dict[Tuple[str, str], VendorScore] = {}
        for raw in read_csv(path):
            key = (raw["model"], raw["vendor"])
            row = grouped.setdefault(key, VendorScore(raw["model"], raw["vendor"], {}, int(raw["n"])))
            row.dice[raw["class"]] = float(raw["dice"])
        return cls(list(grouped.values()))

    def table(self, title: str = "Average Dice per vendor") -> Table:
        """Rows = models; column groups = vendors x (LV, MYO, RV)."""
        table = Table(title=title)
        table.add_column("Model")
        for vendor in self.vendors:
            for name in FOREGROUND_NAMES:
                table.add_column(f"{vendor} {name}", justify="right")
        for model in self.models:
            cells = [model]
            for vendor in self.vendors:
                row = self.get(model, vendor)
                cells += [f"{row.dice[name]:.3f}" if row else "-" for name in FOREGROUND_NAMES]
            table.add_row(*cells)
        return table

    def render_text(self, title: str = "Average Dice per vendor") -> str:
        buffer = io.StringIO()
        Console(file=buffer, width=40 + 24 * max(1, len(self.vendors)), color_system=None).print(self.table(title))
        return buffer.getvalue()


def evaluate(
    checkpoint: ModelSource,
    manifest: DatasetManifest,
    model_name: str,
    target_size: int = DEFAULT_TARGET_SIZE,
    vendors: Optional[Iterable[str]] = None,
    batch_size: int = 8,
    logger: Optional[Logger] = None,
) -> EvalReport:
    """Per-vendor mean of per-slice Dice for LV, MYO and RV."""
    log = logger or null_logger("eval")
    selected = manifest.select(vendors) if vendors is not None else manifest
    for index, record in enumerate(selected.records):
        if not record.labeled:
            raise MissingMaskError(f"record {index} ({record.vendor} {record.key}) has no mask; evaluation needs ground truth")
    model = _as_model(checkpoint)
    scores: Dict[str, List[Dict[str, float]]] = {}
    records = list(selected.records)
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        samples = [preprocess(read_sample(record), target_size) for record in chunk]
        predictions = predict_masks(model, [sample.image for sample in samples])
        for record, sample, prediction in zip(chunk, samples, predictions):
            scores.setdefault(record.vendor, []).append(class_dice(prediction, sample.mask))
    report = EvalReport()
    for vendor in dict.fromkeys([*selected.vendors, *scores]):
        per_slice = scores.get(vendor)
        if not per_slice:
            continue
        dice = {name: float(np.mean([s[name] for s in per_slice])) for name in FOREGROUND_NAMES}
        report.rows.append(VendorScore(model_name, vendor, dice, len(per_slice)))
        log.json({"type": "eval", "model": model_name, "vendor": vendor, "n": len(per_slice), **dice})
    log.info("eval", f"{model_name}: {len(records)} slices over {len(report.rows)} vendors")
    return report


def combine_reports(reports: Iterable[EvalReport]) -> EvalReport:
    """Average Dice per (model, vendor) across reports, e.g. over seeds; preserves first-seen order."""
    grouped: Dict[Tuple[str, str], List[VendorScore]] = {}
    for report in reports:
        for row in report.rows:
            grouped.setdefault((row.model, row.vendor), []).append(row)
    combined = EvalReport()
    for (model, vendor), rows in grouped.items():
        dice = {name: float(np.mean([row.dice[name] for row in rows])) for name in FOREGROUND_NAMES}
        combined.rows.append(VendorScore(model, vendor, dice, rows[0].n))
    return combined
