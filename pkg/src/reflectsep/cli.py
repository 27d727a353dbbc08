"""Command-line interface: ``reflectsep {separate,synthesize,evaluate,benchmark,ablate}``.

Exit codes: 0 success, 2 usage/configuration error, 3 data error, 4 numeric
failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import __version__
from .config import EngineConfig, load_config, parse_overrides
from .errors import ConfigError, ReflectSepError, SeparationDiverged

log = logging.getLogger("reflectsep")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# each scenario: (folder name, config switches)
ABLATIONS = (
    ("I_recon", dict(disable_exclusion=True, disable_cross=True, disable_reg=True)),
    ("II_exclusion", dict(disable_cross=True, disable_reg=True)),
    ("III_cross", dict(disable_reg=True)),
    ("IV_full", dict()),
    ("no_alpha", dict(disable_alpha=True)),
    ("no_embedding", dict(disable_embedding=True)),
)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("-s", "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field (repeatable)")
    g.add_argument("--iterations", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--image-size", type=int, dest="image_size")
    g.add_argument("--lr", type=float, dest="learning_rate")
    g.add_argument("--weights", dest="backbone_weights_path", help="ResNet18 weights file")
    g.add_argument("--source", dest="backbone_source", choices=("places365", "imagenet", "random"))


def _config_from_args(args) -> EngineConfig:
    overrides = parse_overrides(args.overrides)
    for key in ("iterations", "seed", "image_size", "learning_rate", "backbone_weights_path", "backbone_source"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def _run_meta(cfg: EngineConfig) -> dict:
    return {"effective_loss_weights": dataclasses.asdict(cfg.loss_weights())}


def cmd_separate(args) -> int:
    from .engine import separate
    from .image import load_image
    from .io import write_result

    cfg = _config_from_args(args)
    I = load_image(args.input, cfg.image_size)
    result = separate(I, cfg)
    write_result(result, args.out_dir, _run_meta(cfg))
    print(f"wrote {args.out_dir} (alpha={result.final_alpha:.4f}, iterations={result.iterations_run})")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    from .image import load_image, save_image
    from .metrics import synthesize_mixture

    B = load_image(args.background, args.size)
    R = load_image(args.reflection, args.size)
    if B.shape[0] != R.shape[0]:
        B, R = B.expand(3, -1, -1), R.expand(3, -1, -1)
    mix = synthesize_mixture(B, R, args.sigma, args.weight)
    save_image(mix, args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .engine import SeparationResult
    from .image import load_image
    from .metrics import METRIC_NOTE, evaluate_pair

    B = load_image(os.path.join(args.result_dir, "background.png"), None)
    R = load_image(os.path.join(args.result_dir, "reflection.png"), None)
    size = B.shape[-1]
    mixture = load_image(args.input, size)
    gt_B = load_image(args.background, size)
    gt_R = load_image(args.reflection, size) if args.reflection else None
    result = SeparationResult(B, R, float("nan"), [], [], 0, -1)
    rec = evaluate_pair(result, gt_B, gt_R, mixture=mixture, sample_id=os.path.basename(os.path.normpath(args.result_dir)))
    out = {"note": METRIC_NOTE, **dataclasses.asdict(rec)}
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .metrics import run_benchmark

    cfg = _config_from_args(args)
    report = run_benchmark(args.dataset_dir, cfg, args.report, out_dir=args.out_dir, workers=args.workers)
    print(json.dumps(report["aggregate"], indent=2))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .engine import resolve_backbone, separate
    from .image import load_image, save_image
    from .io import contact_sheet, write_result

    base = _config_from_args(args)
    I = load_image(args.input, base.image_size)
    backbone = resolve_backbone(base.replace(disable_embedding=False))
    rows, summary = [], {}
    for name, switches in ABLATIONS:
        cfg = base.replace(**switches)
        log.info("scenario %s", name)
        if cfg.disable_alpha:
            log.info("scenario %s: alpha fixed at 0.5", name)
        result = separate(I, cfg, backbone=backbone)
        meta = write_result(result, os.path.join(args.out_dir, name), {"scenario": name, **_run_meta(cfg)})
        summary[name] = {"final_alpha": meta["final_alpha"], "final_loss": meta["final_loss"]}
        mix = I.expand(3, -1, -1) if I.shape[0] == 1 else I
        rows.append([mix, result.background, result.reflection])
    save_image(contact_sheet(rows), os.path.join(args.out_dir, "contact_sheet.png"))
    with open(os.path.join(args.out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print(f"wrote {len(ABLATIONS)} scenarios to {args.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reflectsep", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("separate", help="separate one image into background and reflection")
    p.add_argument("input")
    p.add_argument("out_dir")
    _add_config_args(p)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("synthesize", help="compose a synthetic mixture B + weight * blur(R)")
    p.add_argument("background")
    p.add_argument("reflection")
    p.add_argument("output")
    p.add_argument("--weight", type=float, default=0.3)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--size", type=int, default=224)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="PSNR/SSIM of a separate output directory against ground truth")
    p.add_argument("result_dir")
    p.add_argument("--input", required=True, help="the mixture that was separated")
    p.add_argument("--background", required=True, help="ground-truth background")
    p.add_argument("--reflection", help="ground-truth reflection (optional)")
    p.add_argument("--out", help="write the record as JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="separate and score every sample folder of a dataset")
    p.add_argument("dataset_dir")
    p.add_argument("report", help="JSON report path (a CSV is written next to it)")
    p.add_argument("--out-dir", help="also keep per-sample outputs here")
    p.add_argument("--workers", type=int, default=1)
    _add_config_args(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("ablate", help="run the loss, alpha and embedding ablations on one image")
    p.add_argument("input")
    p.add_argument("out_dir")
    _add_config_args(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"reflectsep: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SeparationDiverged as exc:
        print(f"reflectsep: numeric failure: {exc}", file=sys.stderr)
        if exc.last_report is not None:
            print(f"last finite losses: {exc.last_report.as_dict()}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ReflectSepError, OSError, ValueError) as exc:
        print(f"reflectsep: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
