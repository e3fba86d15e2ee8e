"""Disentangled anatomy/modality network and the U-Net baseline.

SDNet = anatomy encoder (U-Net, binarised 8-channel output) + modality encoder (two strided
4x4 convolutions, global average pooling, MLP to an 8-vector) + segmentor (on the binary
anatomy factor) + AdaIN decoder (anatomy x modality -> image in (-1, 1)).
"""

from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import DEFAULT_UNET_WIDTHS
from .data import Image2D
from .errors import CheckpointMismatchError, ShapeError

CHECKPOINT_FORMAT = 1
ADAIN_EPS = 1e-5
BINARY_THRESHOLD = 0.5
ADAIN_LAYERS = 3


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor stored in every checkpoint."""

    kind: str = "sdnet"
    widths: Tuple[int, ...] = DEFAULT_UNET_WIDTHS
    in_channels: int = 1
    anatomy_channels: int = 8
    modality_dim: int = 8
    num_classes: int = 4
    modality_width: int = 16
    segmentor_width: int = 16
    decoder_width: int = 16

    def __post_init__(self) -> None:
        if self.kind not in ("sdnet", "unet"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or min(self.widths) < 1:
            raise ValueError("widths must be a non-empty tuple of positive ints")

    @property
    def size_multiple(self) -> int:
        return 2 ** len(self.widths)

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["widths"] = list(self.widths)
        return payload

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ArchSpec":
        try:
            return cls(**{**payload, "widths": tuple(payload["widths"])})
        except (KeyError, TypeError) as err:
            raise CheckpointMismatchError(f"invalid architecture descriptor: {err}") from err


@dataclass
class AnatomyFactor:
    channels: torch.Tensor  # (N, C, H, W), exactly 0/1
    pre_threshold: torch.Tensor  # (N, C, H, W), in [0, 1]


@dataclass
class ModalityFactor:
    z: torch.Tensor  # (N, modality_dim)


@dataclass
class SDNetOutput:
    anatomy: AnatomyFactor
    modality: ModalityFactor
    probs: torch.Tensor
    reconstruction: torch.Tensor


class RoundSTE(torch.autograd.Function):
    """Threshold at 0.5 (ties to 1) forward, identity gradient backward."""

    @staticmethod
    def forward(ctx, x: torch.Tensor) -> torch.Tensor:  # type: ignore[override]
        return (x >= BINARY_THRESHOLD).to(x.dtype)

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor) -> torch.Tensor:  # type: ignore[override]
        return grad_output


def round_ste(x: torch.Tensor) -> torch.Tensor:
    return RoundSTE.apply(x)


def adain(feature: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = ADAIN_EPS) -> torch.Tensor:
    """Instance-normalize each channel over H, W (population std), then scale and shift."""
    if feature.dim() != 4:
        raise ShapeError(f"adain expects (N, C, H, W), got {tuple(feature.shape)}")
    channels = feature.shape[1]
    if gamma.shape[-1] != channels or beta.shape[-1] != channels:
        raise ShapeError(f"gamma/beta need {channels} values per sample")
    mean = feature.mean(dim=(2, 3), keepdim=True)
    var = feature.var(dim=(2, 3), keepdim=True, unbiased=False)
    normalized = (feature - mean) / torch.sqrt(var + eps)
    return gamma.reshape(-1, channels, 1, 1) * normalized + beta.reshape(-1, channels, 1, 1)


class DoubleConv(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__(
            nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )


class UpBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.conv = DoubleConv(in_channels, out_channels)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
        return self.conv(torch.cat([skip, x], dim=1))


class UNetBackbone(nn.Module):
    """U-Net with one down/up stage per width entry and skip connections."""

    def __init__(self, in_channels: int, widths: Tuple[int, ...]) -> None:
        super().__init__()
        self.size_multiple = 2 ** len(widths)
        self.inc = DoubleConv(in_channels, widths[0])
        chans = list(widths) + [widths[-1]]
        self.downs = nn.ModuleList(
            nn.Sequential(nn.MaxPool2d(2), DoubleConv(chans[i], chans[i + 1])) for i in range(len(widths))
        )
        ups = []
        current = widths[-1]
        for index in reversed(range(len(widths))):
            out = widths[max(index - 1, 0)]
            ups.append(UpBlock(current + widths[index], out))
            current = out
        self.ups = nn.ModuleList(ups)
        self.out_channels = current

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        height, width = x.shape[-2:]
        if height % self.size_multiple or width % self.size_multiple:
            raise ShapeError(f"input {height}x{width} must be divisible by {self.size_multiple}")
        skips = [self.inc(x)]
        h = skips[0]
        for down in self.downs:
            h = down(h)
            skips.append(h)
        skips.pop()
        for up, skip in zip(self.ups, reversed(skips)):
            h = up(h, skip)
        return h


class AnatomyEncoder(nn.Module):
    def __init__(self, arch: ArchSpec) -> None:
        super().__init__()
        self.backbone = UNetBackbone(arch.in_channels, arch.widths)
        self.head = nn.Conv2d(self.backbone.out_channels, arch.anatomy_channels, 1)

    def forward(self, x: torch.Tensor) -> AnatomyFactor:
        soft = torch.sigmoid(self.head(self.backbone(x)))
        return AnatomyFactor(channels=round_ste(soft), pre_threshold=soft)


class ModalityEncoder(nn.Module):
    def __init__(self, arch: ArchSpec) -> None:
        super().__init__()
        width = arch.modality_width
        self.features = nn.Sequential(
            nn.Conv2d(arch.in_channels, width, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width, 2 * width, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.mlp = nn.Sequential(
            nn.Flatten(),
            nn.Linear(2 * width, 2 * width),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(2 * width, arch.modality_dim),
        )

    def project(self, features: torch.Tensor) -> torch.Tensor:
        """Global average pool then MLP; the only path from features to the factor."""
        return self.mlp(self.pool(features))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if min(x.shape[-2:]) < 4:
            raise ShapeError(f"modality encoder needs H, W >= 4, got {tuple(x.shape[-2:])}")
        return self.project(self.features(x))


class Segmentor(nn.Module):
    def __init__(self, arch: ArchSpec) -> None:
        super().__init__()
        width = arch.segmentor_width
        self.layers = nn.Sequential(
            nn.Conv2d(arch.anatomy_channels, width, 3, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, arch.num_classes, 1),
        )

    def forward(self, anatomy: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.layers(anatomy), dim=1)


class AdaINDecoder(nn.Module):
    def __init__(self, arch: ArchSpec) -> None:
        super().__init__()
        width = arch.decoder_width
        self.width = width
        in_channels = [arch.anatomy_channels] + [width] * (ADAIN_LAYERS - 1)
        self.convs = nn.ModuleList(nn.Conv2d(c, width, 3, padding=1) for c in in_channels)
        self.style = nn.Sequential(
            nn.Linear(arch.modality_dim, 4 * width),
            nn.ReLU(inplace=True),
            nn.Linear(4 * width, ADAIN_LAYERS * 2 * width),
        )
        # gamma = 1 + delta: start close to plain instance normalization
        with torch.no_grad():
            self.style[-1].weight.mul_(0.1)
            self.style[-1].bias.zero_()
        self.out = nn.Conv2d(width, arch.in_channels, 7, padding=3)

    def style_params(self, z: torch.Tensor) -> torch.Tensor:
        """(N, layers, 2, width): per-layer (delta gamma, beta)."""
        return self.style(z).view(z.shape[0], ADAIN_LAYERS, 2, self.width)

    def forward(self, anatomy: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        params = self.style_params(z)
        h = anatomy
        for index, conv in enumerate(self.convs):
            h = conv(h)
            h = F.relu(adain(h, 1.0 + params[:, index, 0], params[:, index, 1]))
        return torch.tanh(self.out(h))


class SDNet(nn.Module):
    def __init__(self, arch: Optional[ArchSpec] = None) -> None:
        super().__init__()
        self.arch = arch or ArchSpec()
        self.anatomy_encoder = AnatomyEncoder(self.arch)
        self.modality_encoder = ModalityEncoder(self.arch)
        self.segmentor = Segmentor(self.arch)
        self.decoder = AdaINDecoder(self.arch)

    def forward(self, x: torch.Tensor) -> SDNetOutput:
        anatomy = self.anatomy_encoder(x)
        z = self.modality_encoder(x)
        return SDNetOutput(
            anatomy=anatomy,
            modality=ModalityFactor(z=z),
            probs=self.segmentor(anatomy.channels),
            reconstruction=self.decoder(anatomy.channels, z),
        )

    def segment_probs(self, x: torch.Tensor) -> torch.Tensor:
        return self.segmentor(self.anatomy_encoder(x).channels)


class UNetSegmenter(nn.Module):
    """Baseline: anatomy-encoder topology with a direct class head."""

    def __init__(self, arch: Optional[ArchSpec] = None) -> None:
        super().__init__()
        self.arch = arch or ArchSpec(kind="unet")
        self.backbone = UNetBackbone(self.arch.in_channels, self.arch.widths)
        self.head = nn.Conv2d(self.backbone.out_channels, self.arch.num_classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.head(self.backbone(x)), dim=1)

    def segment_probs(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward(x)


SegmentationModel = Union[SDNet, UNetSegmenter]


def build_model(arch: ArchSpec) -> SegmentationModel:
    return SDNet(arch) if arch.kind == "sdnet" else UNetSegmenter(arch)


# ---------------------------------------------------------------------------
# Inference API


@contextmanager
def evaluating(model: nn.Module) -> Iterator[nn.Module]:
    """Run in eval mode without gradients, restoring the previous mode afterwards."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            yield model
    finally:
        model.train(was_training)


def as_batch(image: Union[Image2D, np.ndarray, torch.Tensor]) -> torch.Tensor:
    """Coerce an image (H, W), a stack (N, H, W) or a batch (N, 1, H, W) to a float tensor batch."""
    if isinstance(image, Image2D):
        tensor = torch.from_numpy(np.array(image.pixels, dtype=np.float32, copy=True))
    elif isinstance(image, np.ndarray):
        tensor = torch.from_numpy(np.array(image, dtype=np.float32, copy=True))
    else:
        tensor = image
    if tensor.dim() == 2:
        tensor = tensor[None, None]
    elif tensor.dim() == 3:
        tensor = tensor[:, None]
    if tensor.dim() != 4:
        raise ShapeError(f"cannot interpret shape {tuple(tensor.shape)} as an image batch")
    return tensor if tensor.is_floating_point() else tensor.float()


def anatomy_encode(model: SDNet, image: Union[Image2D, np.ndarray, torch.Tensor]) -> AnatomyFactor:
    with evaluating(model):
        return model.anatomy_encoder(as_batch(image))


def modality_encode(model: SDNet, image: Union[Image2D, np.ndarray, torch.Tensor]) -> ModalityFactor:
    with evaluating(model):
        return ModalityFactor(z=model.modality_encoder(as_batch(image)))


def segment(model: SDNet, anatomy: Union[AnatomyFactor, torch.Tensor]) -> torch.Tensor:
    channels = anatomy.channels if isinstance(anatomy, AnatomyFactor) else anatomy
    with evaluating(model):
        return model.segmentor(channels)


def decode(
    model: SDNet,
    anatomy: Union[AnatomyFactor, torch.Tensor],
    modality: Union[ModalityFactor, torch.Tensor],
) -> torch.Tensor:
    channels = anatomy.channels if isinstance(anatomy, AnatomyFactor) else anatomy
    z = modality.z if isinstance(modality, ModalityFactor) else modality
    if z.dim() == 1:
        z = z[None]
    with evaluating(model):
        return model.decoder(channels, z)


def forward_full(model: SDNet, image: Union[Image2D, np.ndarray, torch.Tensor]) -> SDNetOutput:
    with evaluating(model):
        return model(as_batch(image))


def segment_probs(model: SegmentationModel, image: Union[Image2D, np.ndarray, torch.Tensor]) -> torch.Tensor:
    with evaluating(model):
        return model.segment_probs(as_batch(image))


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(model: SegmentationModel, path: Union[str, Path], meta: Optional[Dict[str, Any]] = None) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "arch": model.arch.to_dict(),
        "state_dict": {key: value.detach().cpu().clone() for key, value in model.state_dict().items()},
        "meta": dict(meta or {}),
    }
    torch.save(payload, target)
    return target


def load_checkpoint(
    path: Union[str, Path], expected: Optional[ArchSpec] = None
) -> Tuple[SegmentationModel, Dict[str, Any]]:
    """Load a checkpoint in eval mode; rejects descriptor or parameter mismatches."""
    source = Path(path)
    if not source.is_file():
        raise CheckpointMismatchError(f"checkpoint not found: {source}")
    try:
        payload = torch.load(source, map_location="cpu", weights_only=True)
    except Exception as err:  # torch raises several unrelated types for corrupt files
        raise CheckpointMismatchError(f"cannot read checkpoint {source}: {err}") from err
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointMismatchError(f"{source} is not a format-{CHECKPOINT_FORMAT} checkpoint")
    arch = ArchSpec.from_dict(payload["arch"])
    if expected is not None and expected != arch:
        raise CheckpointMismatchError(f"architecture mismatch: checkpoint has {arch}, expected {expected}")
    model = build_model(arch)
    try:
        model.load_state_dict(payload["state_dict"], strict=True)
    except RuntimeError as err:
        raise CheckpointMismatchError(f"parameters in {source} do not match the descriptor: {err}") from err
    model.eval()
    return model, dict(payload.get("meta", {}))


def model_fingerprint(model: SegmentationModel) -> str:
    """SHA-256 over the descriptor and every state tensor, in key order."""
    digest = hashlib.sha256()
    digest.update(json.dumps(model.arch.to_dict(), sort_keys=True).encode("utf8"))
    for key, value in sorted(model.state_dict().items()):
        digest.update(key.encode("utf8"))
        digest.update(value.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
