"""Frozen ResNet18 backbone providing the multi-level perceptual embedding."""

from __future__ import annotations

import enum
import hashlib
import os
import pickle
import zipfile
from typing import NamedTuple

import torch
from torch import nn
from torchvision.models import resnet18

from .errors import ShapeError, WeightsError

# Both the Places365 and the ImageNet ResNet18 releases were trained with these statistics.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

PYRAMID_CHANNELS = (128, 256, 512)
PYRAMID_STRIDES = (8, 16, 32)


class BackboneSource(str, enum.Enum):
    PLACES365 = "places365"
    IMAGENET = "imagenet"
    # seeded, untrained weights; for desk-scale runs and tests when no weights file exists
    RANDOM = "random"


class FeaturePyramid(NamedTuple):
    """Stage 2/3/4 activations, shapes ``(1, 128, H/8, W/8)``, ``(1, 256, H/16, W/16)``,
    ``(1, 512, H/32, W/32)``. The stage-1 map is never part of the pyramid."""

    level2: torch.Tensor
    level3: torch.Tensor
    level4: torch.Tensor


def _trunk_manifest() -> dict[str, torch.Size]:
    ref = resnet18(weights=None)
    return {k: v.shape for k, v in ref.state_dict().items() if not k.startswith("fc.")}


class Backbone(nn.Module):
    """ResNet18 trunk (everything before global pooling), permanently frozen."""

    def __init__(self, source: BackboneSource | str = BackboneSource.RANDOM):
        super().__init__()
        self.source = BackboneSource(source)
        net = resnet18(weights=None)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layer1 = net.layer1
        self.layer2 = net.layer2
        self.layer3 = net.layer3
        self.layer4 = net.layer4
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self._freeze()

    def _freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        super().train(False)

    def train(self, mode: bool = True):
        # inference mode is part of the contract; ignore requests to switch
        return super().train(False)

    def load_trunk_state(self, state: dict[str, torch.Tensor]) -> None:
        mapping = {
            "conv1.": "stem.0.",
            "bn1.": "stem.1.",
        }
        renamed = {}
        for k, v in state.items():
            for old, new in mapping.items():
                if k.startswith(old):
                    k = new + k[len(old):]
                    break
            renamed[k] = v
        self.load_state_dict({**renamed, "mean": self.mean, "std": self.std})
        self._freeze()

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    @torch.no_grad()
    def extract_features(self, img: torch.Tensor) -> FeaturePyramid:
        return extract_features(self, img)


def _clean_state(raw) -> dict[str, torch.Tensor]:
    if isinstance(raw, dict) and "state_dict" in raw and isinstance(raw["state_dict"], dict):
        raw = raw["state_dict"]
    if not isinstance(raw, dict):
        raise WeightsError(f"expected a state dict, got {type(raw).__name__}")
    state = {}
    for k, v in raw.items():
        if not isinstance(v, torch.Tensor):
            continue
        if k.startswith("module."):
            k = k[len("module."):]
        if k.startswith("fc."):
            continue
        state[k] = v
    return state


def load_backbone(weights_path: str | os.PathLike, source: BackboneSource | str = "places365") -> Backbone:
    """Load ResNet18 weights from a ``torch.save`` file.

    Accepted layouts: a bare ``state_dict``; a checkpoint dict with a
    ``"state_dict"`` entry (the Places365 release); keys optionally prefixed by
    ``module.`` (DataParallel). The classifier head (``fc.*``) is ignored, so both
    1000-class and 365-class checkpoints load. Every trunk parameter named by
    ``torchvision.models.resnet18`` must be present with the same shape.
    """
    path = os.fspath(weights_path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        raw = torch.load(path, map_location="cpu", weights_only=True)
    except (RuntimeError, EOFError, pickle.UnpicklingError, zipfile.BadZipFile, ValueError) as exc:
        raise WeightsError(f"cannot read weights file {path}: {exc}") from exc
    state = _clean_state(raw)
    manifest = _trunk_manifest()
    missing = sorted(set(manifest) - set(state))
    unexpected = sorted(set(state) - set(manifest))
    if missing or unexpected:
        raise WeightsError(
            f"{path} does not match the ResNet18 trunk: "
            f"missing={missing[:5]}{'...' if len(missing) > 5 else ''} "
            f"unexpected={unexpected[:5]}{'...' if len(unexpected) > 5 else ''}"
        )
    bad = [k for k, shape in manifest.items() if state[k].shape != shape]
    if bad:
        raise WeightsError(f"{path}: shape mismatch for {bad[:5]}")
    backbone = Backbone(source)
    backbone.load_trunk_state(state)
    return backbone


def random_backbone(seed: int = 0) -> Backbone:
    """Frozen ResNet18 trunk with seeded default initialization."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Backbone(BackboneSource.RANDOM)


def extract_features(backbone: Backbone, img: torch.Tensor) -> FeaturePyramid:
    x = img.unsqueeze(0) if img.dim() == 3 else img
    if x.dim() != 4 or x.shape[1] != 3:
        raise ShapeError(f"extract_features needs a 3-channel image, got {tuple(img.shape)}")
    h, w = x.shape[-2:]
    if h % 32 or w % 32:
        raise ShapeError(f"image size {h}x{w} must be divisible by 32")
    x = x.to(backbone.mean.dtype)
    with torch.no_grad():
        x = (x - backbone.mean) / backbone.std
        x = backbone.layer1(backbone.stem(x))
        l2 = backbone.layer2(x)
        l3 = backbone.layer3(l2)
        l4 = backbone.layer4(l3)
    return FeaturePyramid(l2, l3, l4)
