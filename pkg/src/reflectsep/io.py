"""Writing separation outputs: layer PNGs, per-iteration loss CSV, run metadata."""

from __future__ import annotations

import csv
import json
import os

import torch

from .image import save_image

LOSS_COLUMNS = ("t", "recon", "excld", "cross", "reg", "total", "alpha")


def write_loss_csv(result, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
        for t, (rep, alpha) in enumerate(zip(result.loss_history, result.alpha_history), start=1):
            writer.writerow([t, rep.recon, rep.excld, rep.cross, rep.reg, rep.total, alpha])


def read_loss_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {k: (int(v) if k == "t" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def write_result(result, out_dir, extra: dict | None = None) -> dict:
    """Write background.png, reflection.png, losses.csv and run.json into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    save_image(result.background, os.path.join(out_dir, "background.png"))
    save_image(result.reflection, os.path.join(out_dir, "reflection.png"))
    write_loss_csv(result, os.path.join(out_dir, "losses.csv"))
    meta = {
        "config": result.config.to_dict() if result.config is not None else None,
        "seed": result.seed,
        "final_alpha": result.final_alpha,
        "iterations_run": result.iterations_run,
        "final_loss": result.loss_history[-1].as_dict() if result.loss_history else None,
    }
    if extra:
        meta.update(extra)
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    return meta


def contact_sheet(rows: list[list[torch.Tensor]], pad: int = 2) -> torch.Tensor:
    """Tile equally sized (C, H, W) images into a grid with white separators."""
    rows = [[t.expand(3, -1, -1) if t.shape[0] == 1 else t for t in row] for row in rows]
    h, w = rows[0][0].shape[-2:]
    ncols = max(len(r) for r in rows)
    sheet = torch.ones(3, len(rows) * (h + pad) + pad, ncols * (w + pad) + pad)
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            sheet[:, y:y + h, x:x + w] = img.clamp(0, 1)
    return sheet
