"""Error types raised across sdaug."""

from __future__ import annotations

from typing import Optional


class SdaugError(Exception):
    """Base class for every domain error."""


class ConfigError(SdaugError, ValueError):
    pass


class ManifestError(SdaugError, ValueError):
    def __init__(self, message: str, index: Optional[int] = None) -> None:
        self.index = index
        prefix = f"record {index}: " if index is not None else ""
        super().__init__(f"{prefix}{message}")


class SampleFormatError(SdaugError, ValueError):
    pass


class InvalidLabelError(SampleFormatError):
    pass


class ShapeError(SdaugError, ValueError):
    pass


class DegenerateZoomError(SdaugError, ValueError):
    pass


class CheckpointMismatchError(SdaugError, ValueError):
    pass


class EmptyPoolError(SdaugError, ValueError):
    pass


class MissingMaskError(SdaugError, ValueError):
    pass


class TrainingDivergenceError(SdaugError, RuntimeError):
    def __init__(self, term: str, epoch: Optional[int] = None, step: Optional[int] = None) -> None:
        self.term = term
        self.epoch = epoch
        self.step = step
        where = ""
        if epoch is not None:
            where = f" at epoch {epoch}, step {step}"
        super().__init__(f"non-finite loss term '{term}'{where}")
