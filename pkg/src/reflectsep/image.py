"""Image tensors, file I/O and the differentiable operators shared by the losses.

Convention: an image is a ``torch.Tensor`` of shape ``(C, H, W)`` with
``C in {1, 3}`` and float values in ``[0, 1]``. The operators below also accept
batched input ``(N, C, H, W)``; they act on the last two dimensions.
"""

from __future__ import annotations

import os
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import DegenerateInputError, ImageFormatError, ShapeError

MIN_SIZE = 8
# ITU-R BT.601 luma weights
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


class GradientPair(NamedTuple):
    gx: torch.Tensor
    gy: torch.Tensor


def check_image(img: torch.Tensor, name: str = "image") -> torch.Tensor:
    if not isinstance(img, torch.Tensor):
        raise TypeError(f"{name} must be a torch.Tensor, got {type(img).__name__}")
    if img.dim() not in (3, 4):
        raise ShapeError(f"{name} must be (C, H, W) or (N, C, H, W), got {tuple(img.shape)}")
    c, h, w = img.shape[-3:]
    if c not in (1, 3):
        raise ShapeError(f"{name} must have 1 or 3 channels, got {c}")
    if h < MIN_SIZE or w < MIN_SIZE:
        raise DegenerateInputError(f"{name} is {h}x{w}; at least {MIN_SIZE}x{MIN_SIZE} required")
    if not torch.isfinite(img).all():
        raise ValueError(f"{name} contains non-finite values")
    return img


def same_shape(*tensors: torch.Tensor, names: str = "inputs") -> None:
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != first:
            raise ShapeError(f"{names}: shape mismatch {tuple(first)} vs {tuple(t.shape)}")


def from_numpy(arr: np.ndarray) -> torch.Tensor:
    """Convert an ``H x W`` or ``H x W x C`` uint8/float array to a (C, H, W) tensor."""
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        data = arr.astype(np.float32) / 255.0
    elif arr.dtype == bool:
        data = arr.astype(np.float32)
    else:
        data = arr.astype(np.float32)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.shape[2] == 4:
        data = data[:, :, :3]
    return torch.from_numpy(np.ascontiguousarray(data.transpose(2, 0, 1))).clamp(0.0, 1.0)


def to_numpy(img: torch.Tensor) -> np.ndarray:
    """(C, H, W) tensor to an ``H x W x C`` float array."""
    return img.detach().cpu().numpy().transpose(1, 2, 0)


def resize(img: torch.Tensor, size: int | tuple[int, int]) -> torch.Tensor:
    """Bilinear resize (half-pixel centers) of a (C, H, W) image.

    Downscaling is antialiased so large photographs do not alias at 224 px.
    """
    if isinstance(size, int):
        size = (size, size)
    out = F.interpolate(
        img.unsqueeze(0), size=size, mode="bilinear", align_corners=False, antialias=True
    )
    return out.squeeze(0).clamp(0.0, 1.0)


def load_image(path: str | os.PathLike, target_size: int | None = 224) -> torch.Tensor:
    """Read an 8-bit RGB or grayscale file and resize it to ``target_size`` square.

    Grayscale files stay single-channel; palette/alpha images are converted to RGB.
    Pass ``target_size=None`` to keep the native resolution.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        with Image.open(path) as pil:
            pil.load()
            mode = "L" if pil.mode in ("L", "1", "I;16", "I") else "RGB"
            pil = pil.convert(mode)
            arr = np.asarray(pil, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"cannot decode {path}: {exc}") from exc
    h, w = arr.shape[:2]
    if h < MIN_SIZE or w < MIN_SIZE:
        raise DegenerateInputError(f"{path} is {h}x{w}; at least {MIN_SIZE}x{MIN_SIZE} required")
    img = from_numpy(arr)
    if target_size is not None and (h, w) != (target_size, target_size):
        img = resize(img, target_size)
    return img


def save_image(img: torch.Tensor, path: str | os.PathLike) -> None:
    """Write an 8-bit PNG; values are clamped to [0, 1] and rounded."""
    img = img.detach()
    if img.dim() == 4:
        if img.shape[0] != 1:
            raise ShapeError("save_image takes a single image, not a batch")
        img = img[0]
    if img.dim() != 3 or img.shape[0] not in (1, 3):
        raise ShapeError(f"cannot save tensor of shape {tuple(img.shape)}")
    arr = (img.clamp(0.0, 1.0).cpu().numpy() * 255.0).round().astype(np.uint8)
    if arr.shape[0] == 1:
        pil = Image.fromarray(arr[0], mode="L")
    else:
        pil = Image.fromarray(arr.transpose(1, 2, 0), mode="RGB")
    pil.save(os.fspath(path), format="PNG")


def to_gray(img: torch.Tensor) -> torch.Tensor:
    if img.dim() < 3 or img.shape[-3] != 3:
        raise ShapeError(f"to_gray needs a 3-channel image, got shape {tuple(img.shape)}")
    w = img.new_tensor(GRAY_WEIGHTS).view(3, 1, 1)
    return (img * w).sum(dim=-3, keepdim=True)


def _per_channel(img: torch.Tensor):
    lead = img.shape[:-2]
    h, w = img.shape[-2:]
    return img.reshape(-1, 1, h, w), lead


def sobel_gradients(img: torch.Tensor) -> GradientPair:
    """Per-channel 3x3 Sobel response with reflect padding (output size == input size).

    The kernels are unnormalized: a unit-slope ramp yields ``gx == 8`` inside.
    Computed in separable difference form, so a constant image gives exact zeros.
    """
    flat, _ = _per_channel(img)
    p = F.pad(flat, (1, 1, 1, 1), mode="reflect")
    dx = p[..., :, 2:] - p[..., :, :-2]
    dy = p[..., 2:, :] - p[..., :-2, :]
    gx = dx[..., :-2, :] + 2 * dx[..., 1:-1, :] + dx[..., 2:, :]
    gy = dy[..., :, :-2] + 2 * dy[..., :, 1:-1] + dy[..., :, 2:]
    return GradientPair(gx.reshape(img.shape), gy.reshape(img.shape))


def downsample2(img: torch.Tensor) -> torch.Tensor:
    """2x2 average pooling; odd trailing rows/columns are dropped."""
    h, w = img.shape[-2:]
    if h < 2 or w < 2:
        raise DegenerateInputError(f"cannot downsample a {h}x{w} image by 2")
    flat, lead = _per_channel(img)
    out = F.avg_pool2d(flat, 2)
    return out.reshape(*lead, h // 2, w // 2)


def gaussian_kernel1d(sigma: float, truncate: float = 4.0, dtype=torch.float32) -> torch.Tensor:
    radius = max(1, int(truncate * sigma + 0.5))
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    return (k / k.sum()).to(dtype)


def gaussian_blur(img: torch.Tensor, sigma: float) -> torch.Tensor:
    """Separable Gaussian blur, kernel radius ``round(4 sigma)``, reflect borders.

    ``sigma == 0`` returns the input unchanged.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img.clone()
    k = gaussian_kernel1d(sigma, dtype=img.dtype).to(img.device)
    r = (k.numel() - 1) // 2
    flat, _ = _per_channel(img)
    h, w = img.shape[-2:]
    if r >= h or r >= w:
        raise DegenerateInputError(f"blur radius {r} too large for {h}x{w} image")
    out = F.conv2d(F.pad(flat, (r, r, 0, 0), mode="reflect"), k.view(1, 1, 1, -1))
    out = F.conv2d(F.pad(out, (0, 0, r, r), mode="reflect"), k.view(1, 1, -1, 1))
    return out.reshape(img.shape)
