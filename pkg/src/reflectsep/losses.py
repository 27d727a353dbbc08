"""Loss terms for layer separation and their weighted total.

Reduction convention, used by every term: L2 distances are root-mean-square over
all elements, L1 distances are mean absolute values, and the ceiling penalty is a
mean over pixels and channels. Weights therefore do not depend on image size.
All gradient operators are the Sobel pair from :mod:`reflectsep.image`.

Inputs may be ``(C, H, W)`` or ``(N, C, H, W)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import torch
import torch.nn.functional as F

from .errors import DegenerateInputError
from .image import downsample2, same_shape, sobel_gradients, to_gray

EPS = 1e-8
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1  # exclusion
    lambda2: float = 0.1  # cross-feedback
    lambda3: float = 1.0  # regularization
    omega1: float = 0.1  # gray reconstruction
    omega2: float = 0.1  # gradient reconstruction
    gamma1: float = 0.005  # total variation
    gamma2: float = 0.001  # total-variation balance
    scales: int = 3  # exclusion pyramid depth

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v < 0:
                raise ValueError(f"{f.name} must be >= 0, got {v}")
        if self.scales < 1:
            raise ValueError("scales must be >= 1")


@dataclass
class LossReport:
    """Loss values of one iteration.

    While the graph is alive the fields are 0-dim tensors; :meth:`detached`
    returns a copy holding plain floats. A term whose weight is zero is not
    evaluated and reported as 0.
    """

    recon: torch.Tensor | float
    excld: torch.Tensor | float
    cross: torch.Tensor | float
    reg: torch.Tensor | float
    total: torch.Tensor | float
    parts: dict = field(default_factory=dict)

    def detached(self) -> "LossReport":
        def f(v):
            return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)

        return LossReport(
            f(self.recon), f(self.excld), f(self.cross), f(self.reg), f(self.total),
            {k: f(v) for k, v in self.parts.items()},
        )

    def is_finite(self) -> bool:
        vals = [self.recon, self.excld, self.cross, self.reg, self.total]
        return all(torch.isfinite(torch.as_tensor(v)).all() for v in vals)

    def as_dict(self) -> dict:
        d = asdict(self.detached())
        parts = d.pop("parts")
        d.update({f"part_{k}": v for k, v in parts.items()})
        return d


def _rms(x: torch.Tensor) -> torch.Tensor:
    # vector_norm has a zero subgradient at the origin, unlike sqrt(mean(x**2))
    return torch.linalg.vector_norm(x) / (x.numel() ** 0.5)


def _mean_abs(x: torch.Tensor) -> torch.Tensor:
    return x.abs().mean()


def grad_l1(x: torch.Tensor) -> torch.Tensor:
    """Mean-absolute Sobel gradient magnitude ``mean|gx| + mean|gy|``."""
    gx, gy = sobel_gradients(x)
    return _mean_abs(gx) + _mean_abs(gy)


def reconstruction_terms(I, B, R):
    same_shape(I, B, R, names="reconstruction_loss")
    mix = B + R
    color = _rms(I - mix)
    if I.shape[-3] == 3:
        gray = _rms(to_gray(I) - to_gray(mix))
    else:
        gray = color
    gxi, gyi = sobel_gradients(I)
    gxm, gym = sobel_gradients(mix)
    grad = _mean_abs(gxi - gxm) + _mean_abs(gyi - gym)
    return color, gray, grad


def reconstruction_loss(I, B, R, w: LossWeights = LossWeights()) -> torch.Tensor:
    color, gray, grad = reconstruction_terms(I, B, R)
    return color + w.omega1 * gray + w.omega2 * grad


def _normalized_field(x: torch.Tensor):
    gx, gy = sobel_gradients(x)
    n = torch.linalg.vector_norm(torch.stack([gx, gy])) + EPS
    return gx / n, gy / n


def exclusion_loss(B: torch.Tensor, R: torch.Tensor, N: int = 3) -> torch.Tensor:
    """Sum over ``N`` dyadic scales of ``|| norm(grad B) * norm(grad R) ||_F``.

    Each gradient field (gx and gy together) is divided by its own Frobenius
    norm before the elementwise product.
    """
    same_shape(B, R, names="exclusion_loss")
    if N < 1:
        raise ValueError("N must be >= 1")
    h, w = B.shape[-2:]
    if 2 ** (N - 1) > min(h, w) or min(h, w) // 2 ** (N - 1) < 2:
        raise DegenerateInputError(f"{N} scales too many for a {h}x{w} image")
    total = B.new_zeros(())
    for n in range(N):
        if n:
            B, R = downsample2(B), downsample2(R)
        bx, by = _normalized_field(B)
        rx, ry = _normalized_field(R)
        prod = torch.cat([(bx * rx).flatten(), (by * ry).flatten()])
        total = total + torch.linalg.vector_norm(prod)
    return total


def _gaussian_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-0.5 * (x / sigma) ** 2)
    g = g / g.sum()
    return torch.outer(g, g).to(dtype=dtype, device=device)


def ssim(x: torch.Tensor, y: torch.Tensor, window_size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Mean SSIM for unit dynamic range with a Gaussian window.

    Local statistics use population (not sample) covariance and only windows
    lying fully inside the image, which matches
    ``skimage.metrics.structural_similarity(gaussian_weights=True,
    use_sample_covariance=False, data_range=1)``.
    """
    same_shape(x, y, names="ssim")
    h, w = x.shape[-2:]
    if min(h, w) < window_size:
        raise DegenerateInputError(f"{h}x{w} image smaller than the {window_size}x{window_size} SSIM window")
    xs = x.reshape(-1, 1, h, w)
    ys = y.reshape(-1, 1, h, w)
    win = _gaussian_window(window_size, sigma, x.dtype, x.device).view(1, 1, window_size, window_size)

    def filt(t):
        return F.conv2d(t, win)

    mx, my = filt(xs), filt(ys)
    vx = filt(xs * xs) - mx * mx
    vy = filt(ys * ys) - my * my
    cxy = filt(xs * ys) - mx * my
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return s.mean()


def _feedback_window(shape) -> int:
    # small images (e.g. desk tests) shrink the window to the largest odd size that fits
    m = min(shape[-2:])
    return SSIM_WINDOW if m >= SSIM_WINDOW else (m if m % 2 else m - 1)


def cross_feedback_terms(B_t, R_t, B_prev, R_prev, I):
    same_shape(B_t, R_t, B_prev, R_prev, I, names="cross_feedback_loss")
    B_prev, R_prev, I = B_prev.detach(), R_prev.detach(), I.detach()
    cc = _rms(B_t - (I - R_prev)) + _rms(R_t - (I - B_prev))
    win = _feedback_window(B_t.shape)
    fc = (1 - ssim(B_t, B_prev, win)) + (1 - ssim(R_t, R_prev, win))
    return cc, fc


def cross_feedback_loss(B_t, R_t, B_prev, R_prev, I) -> torch.Tensor:
    """Cross-consistency (RMS to I minus the other layer's previous estimate) plus
    feedback consistency ``1 - ssim`` to the layer's own previous estimate.
    Previous estimates are constants for backpropagation."""
    cc, fc = cross_feedback_terms(B_t, R_t, B_prev, R_prev, I)
    return cc + fc


def regularization_terms(B, R, I):
    same_shape(B, R, I, names="regularization_loss")
    I = I.detach()
    tv_b, tv_r = grad_l1(B), grad_l1(R)
    tv = tv_b + tv_r
    tvb = (tv_b - tv_r).abs()
    ceil = F.relu(B - I).mean() + F.relu(R - I).mean()
    return tv, tvb, ceil


def regularization_loss(B, R, I, w: LossWeights = LossWeights()) -> torch.Tensor:
    tv, tvb, ceil = regularization_terms(B, R, I)
    return w.gamma1 * tv + w.gamma2 * tvb + ceil


def total_loss(I, B_t, R_t, B_prev, R_prev, w: LossWeights = LossWeights()) -> LossReport:
    same_shape(I, B_t, R_t, B_prev, R_prev, names="total_loss")
    zero = B_t.new_zeros(())
    color, gray, grad = reconstruction_terms(I, B_t, R_t)
    recon = color + w.omega1 * gray + w.omega2 * grad
    parts = {"color": color, "gray": gray, "grad": grad}
    excld = exclusion_loss(B_t, R_t, w.scales) if w.lambda1 > 0 else zero
    if w.lambda2 > 0:
        cc, fc = cross_feedback_terms(B_t, R_t, B_prev, R_prev, I)
        cross = cc + fc
    else:
        cc = fc = cross = zero
    parts.update(cc=cc, fc=fc)
    if w.lambda3 > 0:
        tv, tvb, ceil = regularization_terms(B_t, R_t, I)
        reg = w.gamma1 * tv + w.gamma2 * tvb + ceil
    else:
        tv = tvb = ceil = reg = zero
    parts.update(tv=tv, tvb=tvb, ceil=ceil)
    total = recon + w.lambda1 * excld + w.lambda2 * cross + w.lambda3 * reg
    return LossReport(recon, excld, cross, reg, total, parts)
