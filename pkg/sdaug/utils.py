"""General utilities shared across sdaug modules."""

from __future__ import annotations

import csv
import json
import math
from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as pkg_version
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Union

import numpy as np


def dump_json(value: Any) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(value, indent=2, sort_keys=True) + "\n"


def get_version() -> str:
    """Get package version with fallback."""
    try:
        return pkg_version("sdaug")
    except PackageNotFoundError:
        return "0.0.0"


def stream_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent, reproducible generator for one (seed, stream id...) tuple."""
    return np.random.default_rng([int(seed), *[int(part) for part in stream]])


def round_half_away(value: float) -> int:
    return int(math.floor(abs(value) + 0.5)) * (1 if value >= 0 else -1)


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _format_cell(row[key]) for key in header})
    return target


def read_csv(path: Union[str, Path]) -> list[dict[str, str]]:
    with Path(path).open("r", encoding="utf8", newline="") as handle:
        return list(csv.DictReader(handle))


def _format_cell(value: Any) -> Any:
    if isinstance(value, float):
        return f"{value:.8f}" if math.isfinite(value) else str(value)
    return value
