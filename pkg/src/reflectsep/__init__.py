"""Unsupervised single-image reflection separation with two cross-coupled
perceptual deep image priors."""

__version__ = "0.1.0"

from .config import EngineConfig, load_config
from .embedding import Backbone, BackboneSource, FeaturePyramid, extract_features, load_backbone, random_backbone
from .engine import SeparationResult, SeparationState, Separator, blend, constrain_alpha, separate
from .errors import (
    ConfigError,
    DegenerateInputError,
    ImageFormatError,
    ReflectSepError,
    SeparationDiverged,
    ShapeError,
    WeightsError,
)
from .generator import GeneratorConfig, PerceptualDIP, init_generator
from .image import load_image, save_image, sobel_gradients, to_gray
from .losses import LossReport, LossWeights, total_loss
from .metrics import EvalRecord, evaluate_pair, psnr, run_benchmark, synthesize_mixture

__all__ = [
    "Backbone", "BackboneSource", "ConfigError", "DegenerateInputError", "EngineConfig",
    "EvalRecord", "FeaturePyramid", "GeneratorConfig", "ImageFormatError", "LossReport",
    "LossWeights", "PerceptualDIP", "ReflectSepError", "SeparationDiverged", "SeparationResult",
    "SeparationState", "Separator", "ShapeError", "WeightsError", "blend", "constrain_alpha",
    "evaluate_pair", "extract_features", "init_generator", "load_backbone", "load_config",
    "load_image", "psnr", "random_backbone", "run_benchmark", "save_image", "separate",
    "sobel_gradients", "synthesize_mixture", "to_gray", "total_loss",
]
