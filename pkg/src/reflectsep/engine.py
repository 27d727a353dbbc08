"""Per-image optimization of two cross-coupled perceptual DIPs.

Each iteration both generators see ``concat(feedback, I)``; generator 1's
feedback is ``I - R_est`` and generator 2's is ``I - B_est`` from the previous
iteration (both zero at the start, since the estimates are initialized to
``I``). Outputs are blended by ``alpha`` into ``B = (1 - alpha) * B_hat`` and
``R = alpha * R_hat``, the total loss is backpropagated into both generators
and ``alpha``, and one AdamW step is taken.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import torch

from .config import EngineConfig
from .embedding import Backbone, BackboneSource, FeaturePyramid, load_backbone, random_backbone
from .errors import ConfigError, DegenerateInputError, SeparationDiverged, ShapeError
from .generator import GeneratorConfig, PerceptualDIP, forward, init_generator
from .losses import LossReport, LossWeights, total_loss

log = logging.getLogger(__name__)

ALPHA_MAX = 0.5
# alpha used by the symmetric ablation (no role assignment)
ALPHA_DISABLED = 0.5
# torchvision's cached ImageNet ResNet18 checkpoint, used when present
_TORCHVISION_RESNET18 = "resnet18-f37072fd.pth"


def constrain_alpha(alpha_raw):
    """Map an unconstrained scalar to ``(0, 0.5)`` via ``0.5 * sigmoid``."""
    t = alpha_raw if isinstance(alpha_raw, torch.Tensor) else torch.tensor(float(alpha_raw), dtype=torch.float64)
    if not torch.isfinite(t).all():
        raise FloatingPointError(f"alpha_raw is not finite: {alpha_raw}")
    out = ALPHA_MAX * torch.sigmoid(t)
    return out if isinstance(alpha_raw, torch.Tensor) else float(out)


def alpha_to_raw(alpha: float) -> float:
    """Inverse of :func:`constrain_alpha`: ``logit(2 * alpha)``."""
    if not 0.0 < alpha < ALPHA_MAX:
        raise ValueError(f"alpha must lie in (0, {ALPHA_MAX}), got {alpha}")
    p = 2.0 * alpha
    return math.log(p / (1.0 - p))


def blend(B_hat: torch.Tensor, R_hat: torch.Tensor, alpha):
    """``((1 - alpha) * B_hat, alpha * R_hat)``.

    ``alpha`` must lie in ``(0, 0.5]``; the closed upper end is only reached by
    the symmetric ablation that fixes ``alpha = 0.5``.
    """
    a = float(alpha.detach()) if isinstance(alpha, torch.Tensor) else float(alpha)
    if not 0.0 < a <= ALPHA_MAX:
        raise ValueError(f"alpha must lie in (0, {ALPHA_MAX}], got {a}")
    return (1 - alpha) * B_hat, alpha * R_hat


@dataclass
class SeparationState:
    t: int
    T: int
    I: torch.Tensor
    B_est: torch.Tensor
    R_est: torch.Tensor
    B_cross: torch.Tensor
    R_cross: torch.Tensor
    optimizer: torch.optim.Optimizer
    # None when alpha is fixed (disable_alpha ablation)
    alpha_raw: torch.Tensor | None
    alpha: float
    cross_feedback: bool = True
    last_report: LossReport | None = None

    @property
    def alpha_tensor(self):
        if self.alpha_raw is None:
            return self.alpha
        return constrain_alpha(self.alpha_raw)


@dataclass
class SeparationResult:
    background: torch.Tensor
    reflection: torch.Tensor
    final_alpha: float
    loss_history: list[LossReport]
    alpha_history: list[float]
    iterations_run: int
    seed: int
    config: EngineConfig | None = None
    mixture: torch.Tensor | None = field(default=None, repr=False)


def _batched(img: torch.Tensor) -> torch.Tensor:
    return img.unsqueeze(0) if img.dim() == 3 else img


def init_state(
    I: torch.Tensor,
    G1: PerceptualDIP,
    G2: PerceptualDIP,
    iterations: int,
    learning_rate: float = 1e-4,
    alpha_init: float = 0.1,
    fixed_alpha: float | None = None,
    alpha_learning_rate: float | None = None,
    betas=(0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 1e-2,
    cross_feedback: bool = True,
) -> SeparationState:
    I = _batched(I).detach()
    B0 = I.clone()
    R0 = I.clone()
    groups = [{"params": list(G1.parameters()) + list(G2.parameters())}]
    if fixed_alpha is None:
        alpha_raw = torch.tensor(alpha_to_raw(alpha_init), dtype=I.dtype, device=I.device, requires_grad=True)
        group = {"params": [alpha_raw]}
        if alpha_learning_rate is not None:
            group["lr"] = alpha_learning_rate
        groups.append(group)
        alpha = float(constrain_alpha(alpha_raw.detach()))
    else:
        alpha_raw = None
        alpha = float(fixed_alpha)
    kwargs = dict(lr=learning_rate, betas=betas, eps=eps, weight_decay=weight_decay)
    try:
        optimizer = torch.optim.AdamW(groups, fused=I.device.type in ("cpu", "cuda"), **kwargs)
    except (RuntimeError, TypeError):
        optimizer = torch.optim.AdamW(groups, **kwargs)
    return SeparationState(
        t=0, T=iterations, I=I, B_est=B0, R_est=R0,
        B_cross=I - R0, R_cross=I - B0,
        optimizer=optimizer, alpha_raw=alpha_raw, alpha=alpha,
        cross_feedback=cross_feedback,
    )


def step(
    state: SeparationState,
    I: torch.Tensor,
    G1: PerceptualDIP,
    G2: PerceptualDIP,
    pyramid: FeaturePyramid | None,
    w: LossWeights,
) -> SeparationState:
    """Run one iteration in place and return ``state``.

    ``state.last_report`` receives the detached loss report and ``state.alpha``
    the blend value that produced the new estimates.
    """
    I = _batched(I).detach()
    if I.shape != state.B_est.shape:
        raise ShapeError(f"image {tuple(I.shape)} does not match state {tuple(state.B_est.shape)}")
    if state.cross_feedback:
        fb1, fb2 = state.B_cross, state.R_cross
    else:
        fb1, fb2 = state.B_est, state.R_est
    B_hat = forward(G1, fb1, I, pyramid)
    R_hat = forward(G2, fb2, I, pyramid)
    alpha = state.alpha_tensor
    B_t, R_t = blend(B_hat, R_hat, alpha)
    report = total_loss(I, B_t, R_t, state.B_est, state.R_est, w)
    if not report.is_finite():
        raise SeparationDiverged(
            f"non-finite loss at iteration {state.t + 1}", state.t + 1, state.last_report
        )
    state.optimizer.zero_grad(set_to_none=True)
    report.total.backward()
    state.optimizer.step()

    a = float(alpha.detach()) if isinstance(alpha, torch.Tensor) else float(alpha)
    if state.alpha_raw is not None and not 0.0 < a < ALPHA_MAX:
        raise SeparationDiverged(f"alpha left (0, 0.5): {a}", state.t + 1, state.last_report)
    state.B_est = B_t.detach()
    state.R_est = R_t.detach()
    state.B_cross = I - state.R_est
    state.R_cross = I - state.B_est
    state.alpha = a
    state.t += 1
    state.last_report = report.detached()
    return state


def _cached_imagenet_weights() -> str | None:
    path = os.path.join(torch.hub.get_dir(), "checkpoints", _TORCHVISION_RESNET18)
    return path if os.path.exists(path) else None


def resolve_backbone(config: EngineConfig) -> Backbone | None:
    """Backbone selected by the config, or ``None`` when the embedding is disabled."""
    if config.disable_embedding:
        return None
    source = BackboneSource(config.backbone_source)
    path = config.backbone_weights_path
    if source is BackboneSource.RANDOM:
        if path:
            return load_backbone(path, source)
        return random_backbone(0)
    if path is None and source is BackboneSource.IMAGENET:
        path = _cached_imagenet_weights()
    if path is None:
        raise ConfigError(
            f"backbone_source={source.value} needs backbone_weights_path "
            "(or the REFLECTSEP_BACKBONE_WEIGHTS environment variable); "
            "use backbone_source=random for an untrained backbone"
        )
    return load_backbone(path, source)


def build_generators(config: EngineConfig) -> tuple[PerceptualDIP, PerceptualDIP]:
    common = dict(
        base_channels=config.base_channels,
        depth=config.depth,
        embed_levels=() if config.disable_embedding else (3, 4, 5),
        norm_kind=config.norm_kind,
        skip=config.skip,
    )
    # distinct, reproducible initializations for the two generators
    g1 = init_generator(GeneratorConfig(seed=2 * config.seed, **common))
    g2 = init_generator(GeneratorConfig(seed=2 * config.seed + 1, **common))
    return g1, g2


class Separator:
    """A separation run that can be advanced one iteration at a time."""

    def __init__(self, I: torch.Tensor, config: EngineConfig, backbone: Backbone | None = None):
        if I.dim() != 3:
            raise ShapeError(f"expected a (C, H, W) image, got {tuple(I.shape)}")
        if I.shape[0] == 1:
            I = I.expand(3, -1, -1)
        if I.shape[0] != 3:
            raise ShapeError(f"expected 1 or 3 channels, got {I.shape[0]}")
        h, w = I.shape[-2:]
        m = 2 ** config.depth
        if h % m or w % m or h < m or w < m:
            raise DegenerateInputError(f"image {h}x{w} must be a positive multiple of {m} on both sides")
        self.config = config
        self.device = torch.device(config.device)
        self.I = I.detach().to(self.device, torch.float32).contiguous()
        self.weights = config.loss_weights()
        if config.disable_embedding:
            self.backbone = None
        elif backbone is not None:
            self.backbone = backbone
        else:
            self.backbone = resolve_backbone(config)
        if self.backbone is not None:
            self.backbone = self.backbone.to(self.device)
            # the pyramid depends only on I, so it is computed once
            self.pyramid = self.backbone.extract_features(self.I)
        else:
            self.pyramid = None
        self.G1, self.G2 = (g.to(self.device).train() for g in build_generators(config))
        self.state = init_state(
            self.I, self.G1, self.G2, config.iterations,
            learning_rate=config.learning_rate,
            alpha_init=config.alpha_init,
            fixed_alpha=ALPHA_DISABLED if config.disable_alpha else None,
            alpha_learning_rate=config.alpha_learning_rate,
            betas=(config.adam_beta1, config.adam_beta2),
            eps=config.adam_eps,
            weight_decay=config.weight_decay,
            cross_feedback=not config.disable_cross,
        )
        if config.disable_alpha:
            log.info("alpha fixed at %.2f (disable_alpha)", ALPHA_DISABLED)
        self.history: list[LossReport] = []
        self.alpha_history: list[float] = []

    def step(self) -> LossReport:
        step(self.state, self.I, self.G1, self.G2, self.pyramid, self.weights)
        rep = self.state.last_report
        self.history.append(rep)
        self.alpha_history.append(self.state.alpha)
        every = self.config.log_every
        if every and self.state.t % every == 0:
            log.info("iter %d/%d total=%.5f alpha=%.4f", self.state.t, self.state.T, rep.total, self.state.alpha)
        return rep

    def run(self, iterations: int | None = None, callback=None) -> SeparationResult:
        n = self.state.T - self.state.t if iterations is None else iterations
        for _ in range(n):
            self.step()
            if callback is not None:
                callback(self)
        return self.result()

    def result(self) -> SeparationResult:
        return SeparationResult(
            background=self.state.B_est[0].detach().cpu().clamp(0.0, 1.0),
            reflection=self.state.R_est[0].detach().cpu().clamp(0.0, 1.0),
            final_alpha=self.state.alpha,
            loss_history=list(self.history),
            alpha_history=list(self.alpha_history),
            iterations_run=self.state.t,
            seed=self.config.seed,
            config=self.config,
            mixture=self.I.cpu(),
        )


def separate(I: torch.Tensor, config: EngineConfig | None = None, backbone: Backbone | None = None, callback=None) -> SeparationResult:
    """Separate ``I`` (a (C, H, W) image in [0, 1]) into background and reflection.

    Runs ``config.iterations`` iterations from ``B = R = I`` with
    ``alpha = config.alpha_init``. A fixed ``config.seed`` reproduces the run.
    """
    config = config or EngineConfig()
    return Separator(I, config, backbone).run(callback=callback)
