"""PSNR/SSIM evaluation, synthetic mixtures and dataset benchmarking.

Metrics are computed on [0, 1] images (peak 1.0). SSIM uses the same
implementation as the feedback-consistency loss and averages over RGB channels.

Dataset layout expected by :func:`run_benchmark`::

    dataset/
      sample_a/input.png  background.png  [reflection.png]
      sample_b/...
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import torch

from .config import EngineConfig
from .errors import ReflectSepError
from .image import gaussian_blur, load_image, same_shape
from .losses import ssim

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
METRIC_NOTE = "PSNR/SSIM on [0,1] RGB (peak 1.0), SSIM averaged over channels; identical images give PSNR 99 dB"


def psnr(x: torch.Tensor, y: torch.Tensor, peak: float = 1.0) -> float:
    same_shape(x, y, names="psnr")
    mse = float(torch.mean((x.double() - y.double()) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def ssim_metric(x: torch.Tensor, y: torch.Tensor) -> float:
    same_shape(x, y, names="ssim")
    return float(ssim(x.double(), y.double()))


def synthesize_mixture(B: torch.Tensor, R: torch.Tensor, blur_sigma: float = 0.0, weight: float = 1.0) -> torch.Tensor:
    """``clamp01(B + weight * gaussian_blur(R, blur_sigma))``."""
    same_shape(B, R, names="synthesize_mixture")
    if not 0.0 < weight <= 1.0:
        raise ValueError(f"weight must lie in (0, 1], got {weight}")
    return (B + weight * gaussian_blur(R, blur_sigma)).clamp(0.0, 1.0)


@dataclass
class EvalRecord:
    sample_id: str
    psnr_B: float
    ssim_B: float
    input_psnr_B: float
    input_ssim_B: float
    psnr_R: float | None = None
    ssim_R: float | None = None


def _match(img: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    if img.shape[0] == 1 and ref.shape[0] == 3:
        return img.expand(3, -1, -1)
    return img


def evaluate_pair(result, gt_B: torch.Tensor, gt_R: torch.Tensor | None = None,
                  mixture: torch.Tensor | None = None, sample_id: str = "") -> EvalRecord:
    """Score a :class:`~reflectsep.engine.SeparationResult` against ground truth.

    ``mixture`` defaults to ``result.mixture`` and provides the do-nothing
    baseline ``input_psnr_B``.
    """
    B = result.background
    gt_B = _match(gt_B, B)
    if mixture is None:
        mixture = result.mixture
    if mixture is None:
        raise ValueError("evaluate_pair needs the input mixture")
    mixture = _match(mixture, B)
    same_shape(B, gt_B, mixture, names="evaluate_pair")
    rec = EvalRecord(
        sample_id=sample_id,
        psnr_B=psnr(B, gt_B),
        ssim_B=ssim_metric(B, gt_B),
        input_psnr_B=psnr(mixture, gt_B),
        input_ssim_B=ssim_metric(mixture, gt_B),
    )
    if gt_R is not None:
        gt_R = _match(gt_R, result.reflection)
        same_shape(result.reflection, gt_R, names="evaluate_pair")
        rec.psnr_R = psnr(result.reflection, gt_R)
        rec.ssim_R = ssim_metric(result.reflection, gt_R)
    return rec


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def aggregate(records: list[EvalRecord]) -> dict:
    keys = ("psnr_B", "ssim_B", "psnr_R", "ssim_R", "input_psnr_B", "input_ssim_B")
    return {f"mean_{k}": _mean(getattr(r, k) for r in records) for k in keys} | {"count": len(records)}


def find_samples(dataset_dir: str) -> list[tuple[str, str]]:
    if not os.path.isdir(dataset_dir):
        raise FileNotFoundError(dataset_dir)
    samples = []
    for name in sorted(os.listdir(dataset_dir)):
        path = os.path.join(dataset_dir, name)
        if not os.path.isdir(path):
            continue
        if not (os.path.isfile(os.path.join(path, "input.png")) and os.path.isfile(os.path.join(path, "background.png"))):
            log.warning("skipping %s: needs input.png and background.png", path)
            continue
        samples.append((name, path))
    return samples


def _run_sample(args) -> EvalRecord | None:
    from .engine import separate

    name, path, config, out_dir = args
    try:
        I = load_image(os.path.join(path, "input.png"), config.image_size)
        gt_B = load_image(os.path.join(path, "background.png"), config.image_size)
        r_path = os.path.join(path, "reflection.png")
        gt_R = load_image(r_path, config.image_size) if os.path.isfile(r_path) else None
    except (OSError, ReflectSepError) as exc:
        log.warning("skipping %s: %s", path, exc)
        return None
    result = separate(I, config)
    rec = evaluate_pair(result, gt_B, gt_R, sample_id=name)
    if out_dir is not None:
        from .io import write_result

        write_result(result, os.path.join(out_dir, name))
    return rec


def run_benchmark(dataset_dir: str, config: EngineConfig, report_path: str,
                  out_dir: str | None = None, workers: int = 1) -> dict:
    """Separate every sample, score it and write ``report_path`` (JSON) plus a
    sibling CSV with one row per sample. Returns the report dict."""
    samples = find_samples(dataset_dir)
    if not samples:
        raise ReflectSepError(f"no usable samples in {dataset_dir}")
    jobs = [(name, path, config, out_dir) for name, path in samples]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_sample, jobs))
    else:
        outputs = [_run_sample(j) for j in jobs]
    records = [r for r in outputs if r is not None]
    if not records:
        raise ReflectSepError(f"every sample in {dataset_dir} was malformed")
    report = {
        "note": METRIC_NOTE,
        "config": config.to_dict(),
        "records": [asdict(r) for r in records],
        "aggregate": aggregate(records),
    }
    os.makedirs(os.path.dirname(os.path.abspath(report_path)), exist_ok=True)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    csv_path = os.path.splitext(report_path)[0] + ".csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(asdict(records[0])))
        writer.writeheader()
        for r in records:
            writer.writerow(asdict(r))
    return report
