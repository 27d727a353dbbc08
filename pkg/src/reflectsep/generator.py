"""Perceptual DIP: an hourglass generator whose encoder is fed the perceptual embedding."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .embedding import PYRAMID_CHANNELS, PYRAMID_STRIDES, FeaturePyramid
from .errors import ConfigError, ShapeError

NORM_KINDS = ("batch", "instance", "none")


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 32
    depth: int = 5
    # encoder levels (stride 2**level) that receive the pyramid map of equal resolution
    embed_levels: tuple[int, ...] = (3, 4, 5)
    norm_kind: str = "batch"
    skip: bool = True
    seed: int = 0
    in_channels: int = 6
    out_channels: int = 3
    max_channels: int = 512
    leaky_slope: float = 0.2

    def validate(self) -> None:
        if self.base_channels < 1 or self.max_channels < self.base_channels:
            raise ConfigError("base_channels must be in [1, max_channels]")
        if self.depth < len(self.embed_levels) + 2:
            raise ConfigError(
                f"depth={self.depth} too shallow for {len(self.embed_levels)} embedding levels "
                "(need depth >= levels + 2)"
            )
        valid = {s.bit_length() - 1 for s in PYRAMID_STRIDES}
        for lvl in self.embed_levels:
            if lvl not in valid:
                raise ConfigError(f"embed level {lvl} has no pyramid map (allowed: {sorted(valid)})")
            if lvl > self.depth:
                raise ConfigError(f"embed level {lvl} deeper than depth {self.depth}")
        if len(set(self.embed_levels)) != len(self.embed_levels):
            raise ConfigError("duplicate embed levels")
        if self.norm_kind not in NORM_KINDS:
            raise ConfigError(f"norm_kind must be one of {NORM_KINDS}")

    @property
    def multiple(self) -> int:
        return 2 ** self.depth


def _norm(kind: str, ch: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm2d(ch)
    if kind == "instance":
        return nn.InstanceNorm2d(ch, affine=True)
    return nn.Identity()


def _block(cin: int, cout: int, stride: int, cfg: GeneratorConfig) -> nn.Sequential:
    # conv bias is redundant in front of a normalization layer (and would get zero gradient)
    bias = cfg.norm_kind == "none"
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, padding_mode="reflect", bias=bias),
        _norm(cfg.norm_kind, cout),
        nn.LeakyReLU(cfg.leaky_slope),
    )


_LEVEL_TO_PYRAMID = {s.bit_length() - 1: i for i, s in enumerate(PYRAMID_STRIDES)}


class PerceptualDIP(nn.Module):
    """Encoder: ``depth`` stride-2 blocks doubling channels up to ``max_channels``;
    pyramid maps are concatenated after the block of equal resolution.
    Decoder: bilinear 2x upsampling, concatenation of the same-resolution encoder
    activation (or the network input at full resolution), conv block. A 1x1
    convolution and a sigmoid produce the output layer.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config
        cfg = config
        widths = [min(cfg.base_channels * 2 ** k, cfg.max_channels) for k in range(cfg.depth)]
        # channels of the encoder activation at each level, 0 = network input
        enc_out = [cfg.in_channels]
        self.encoder = nn.ModuleList()
        for k in range(1, cfg.depth + 1):
            self.encoder.append(_block(enc_out[-1], widths[k - 1], 2, cfg))
            extra = PYRAMID_CHANNELS[_LEVEL_TO_PYRAMID[k]] if k in cfg.embed_levels else 0
            enc_out.append(widths[k - 1] + extra)
        self.decoder = nn.ModuleList()
        ch = enc_out[cfg.depth]
        for k in range(cfg.depth - 1, -1, -1):
            cin = ch + (enc_out[k] if cfg.skip else 0)
            cout = widths[k - 1] if k > 0 else cfg.base_channels
            self.decoder.append(_block(cin, cout, 1, cfg))
            ch = cout
        self.head = nn.Conv2d(ch, cfg.out_channels, 1)

    def forward(self, x: torch.Tensor, pyramid: FeaturePyramid | None = None) -> torch.Tensor:
        cfg = self.config
        h, w = x.shape[-2:]
        if h % cfg.multiple or w % cfg.multiple:
            raise ShapeError(f"input {h}x{w} must be divisible by {cfg.multiple}")
        if cfg.embed_levels and pyramid is None:
            raise ShapeError("this generator needs a feature pyramid")
        skips = [x]
        for k, block in enumerate(self.encoder, start=1):
            x = block(x)
            if k in cfg.embed_levels:
                feat = pyramid[_LEVEL_TO_PYRAMID[k]]
                if feat.shape[-2:] != x.shape[-2:]:
                    raise ShapeError(
                        f"pyramid level at stride {2 ** k} is {tuple(feat.shape[-2:])}, "
                        f"encoder expects {tuple(x.shape[-2:])}"
                    )
                x = torch.cat([x, feat.expand(x.shape[0], -1, -1, -1).to(x.dtype)], dim=1)
            skips.append(x)
        for i, block in enumerate(self.decoder):
            k = cfg.depth - 1 - i
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            if cfg.skip:
                x = torch.cat([x, skips[k]], dim=1)
            x = block(x)
        return torch.sigmoid(self.head(x))

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()


GeneratorNetwork = PerceptualDIP


def init_generator(config: GeneratorConfig) -> PerceptualDIP:
    """Build a generator with parameters drawn from ``config.seed`` (global RNG untouched)."""
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        return PerceptualDIP(config)


def forward(
    net: PerceptualDIP,
    feedback: torch.Tensor,
    input_image: torch.Tensor,
    pyramid: FeaturePyramid | None,
) -> torch.Tensor:
    """Run one generator on ``concat(feedback, input_image)``; returns (1, 3, H, W) in [0, 1]."""
    fb = feedback.unsqueeze(0) if feedback.dim() == 3 else feedback
    im = input_image.unsqueeze(0) if input_image.dim() == 3 else input_image
    if fb.shape != im.shape:
        raise ShapeError(f"feedback {tuple(fb.shape)} and input {tuple(im.shape)} differ")
    x = torch.cat([fb, im], dim=1)
    if x.shape[1] != net.config.in_channels:
        raise ShapeError(f"generator expects {net.config.in_channels} input channels, got {x.shape[1]}")
    return net(x, pyramid)
