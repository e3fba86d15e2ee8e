"""Loss terms and the weighted training objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Any, Optional

import torch
import torch.nn.functional as F

from .errors import ShapeError, TrainingDivergenceError

DICE_EPS = 1e-6
FOCAL_FLOOR = 1e-7
DEFAULT_FOCAL_GAMMA = 2.0
DEFAULT_FOCAL_ALPHA = 0.25


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    zrec: float = 1.0
    dice: float = 1.0
    focal: float = 1.0

    def __post_init__(self) -> None:
        for item in fields(self):
            value = getattr(self, item.name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"loss weight '{item.name}' must be finite and >= 0, got {value}")

    @classmethod
    def labeled(cls) -> "LossWeights":
        return cls(1.0, 1.0, 1.0, 1.0)

    @classmethod
    def unlabeled(cls) -> "LossWeights":
        return cls(1.0, 1.0, 0.0, 0.0)

    @classmethod
    def segmentation_only(cls) -> "LossWeights":
        return cls(0.0, 0.0, 1.0, 1.0)


@dataclass
class LossTerms:
    """Scalar loss tensors; a term left as None was not computed for the batch."""

    rec: Optional[torch.Tensor] = None
    zrec: Optional[torch.Tensor] = None
    dice: Optional[torch.Tensor] = None
    focal: Optional[torch.Tensor] = None

    def as_floats(self) -> dict[str, float]:
        return {item.name: _item(getattr(self, item.name)) for item in fields(self)}


def _item(value: Optional[torch.Tensor]) -> float:
    return float("nan") if value is None else float(value.detach())


def _one_hot(mask: torch.Tensor, num_classes: int) -> torch.Tensor:
    labels = mask.long()
    if labels.dim() == 2:
        labels = labels[None]
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ShapeError(f"mask labels must lie in [0, {num_classes - 1}]")
    return F.one_hot(labels, num_classes).permute(0, 3, 1, 2)


def _check_probs(probs: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if probs.dim() == 3:
        probs = probs[None]
    spatial = mask.shape[-2:]
    batch = 1 if mask.dim() == 2 else mask.shape[0]
    if probs.dim() != 4 or probs.shape[-2:] != spatial or probs.shape[0] != batch:
        raise ShapeError(f"probs {tuple(probs.shape)} do not match mask {tuple(mask.shape)}")
    return probs


def rec_loss(image: torch.Tensor, reconstruction: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference."""
    if image.shape != reconstruction.shape:
        raise ShapeError(f"reconstruction {tuple(reconstruction.shape)} != image {tuple(image.shape)}")
    return (image - reconstruction).abs().mean()


def latent_regression_loss(model: Any, anatomy: torch.Tensor, z_sampled: torch.Tensor) -> torch.Tensor:
    """Decode ``anatomy`` with a prior-sampled ``z``, re-encode the result, compare the two codes.

    ``model`` needs ``decoder(anatomy, z)`` and ``modality_encoder(image)``.
    """
    if z_sampled.dim() == 1:
        z_sampled = z_sampled[None]
    generated = model.decoder(anatomy, z_sampled)
    z_hat = model.modality_encoder(generated)
    if z_hat.shape != z_sampled.shape:
        raise ShapeError(f"re-encoded code {tuple(z_hat.shape)} != sampled {tuple(z_sampled.shape)}")
    return (z_sampled - z_hat).abs().mean()


def sample_modality_prior(batch: int, dim: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    return torch.randn(batch, dim, generator=generator)


def dice_loss(probs: torch.Tensor, mask: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """One minus the smoothed soft Dice averaged over the foreground classes.

    Sums run over every pixel of every sample in the batch.
    """
    probs = _check_probs(probs, mask)
    target = _one_hot(mask, probs.shape[1]).to(probs.dtype)
    dims = (0, 2, 3)
    intersection = (probs * target).sum(dim=dims)
    denominator = probs.sum(dim=dims) + target.sum(dim=dims)
    per_class = (2.0 * intersection + eps) / (denominator + eps)
    return 1.0 - per_class[1:].mean()


def focal_loss(
    probs: torch.Tensor,
    mask: torch.Tensor,
    gamma: float = DEFAULT_FOCAL_GAMMA,
    alpha: float = DEFAULT_FOCAL_ALPHA,
) -> torch.Tensor:
    """Mean over pixels of -alpha (1 - p_t)^gamma log p_t."""
    if gamma < 0:
        raise ValueError("focal gamma must be >= 0")
    if not (0 < alpha <= 1):
        raise ValueError("focal alpha must lie in (0, 1]")
    probs = _check_probs(probs, mask)
    labels = mask.long()
    if labels.dim() == 2:
        labels = labels[None]
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ShapeError(f"mask labels must lie in [0, {probs.shape[1] - 1}]")
    p_t = probs.gather(1, labels[:, None]).squeeze(1).clamp_min(FOCAL_FLOOR)
    return (-alpha * (1.0 - p_t).pow(gamma) * torch.log(p_t)).mean()


def total_loss(terms: LossTerms, weights: LossWeights) -> torch.Tensor:
    """Weighted sum of the computed terms. Zero-weighted terms never enter the graph."""
    total: Optional[torch.Tensor] = None
    for item in fields(terms):
        value = getattr(terms, item.name)
        if value is None:
            if getattr(weights, item.name) > 0:
                raise ValueError(f"loss term '{item.name}' has weight > 0 but was not computed")
            continue
        if not bool(torch.isfinite(value.detach()).all()):
            raise TrainingDivergenceError(item.name)
        weight = getattr(weights, item.name)
        if weight == 0:
            continue
        contribution = weight * value
        total = contribution if total is None else total + contribution
    if total is None:
        return torch.zeros(())
    return total
