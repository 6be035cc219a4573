"""Command-line interface: generate, train, evaluate, ablate, render.

Exit codes: 0 on success, 1 for configuration problems (bad flags, bad config
file, incompatible crop/architecture), 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import evaluate, render_overlay
from .experiment import (ConfigError, build_experiment_config, read_config_file,
                         run_ablation)
from .imageio import write_ppm
from .losses import LossSpec
from .optim import TrainConfig, train
from .report import curve_svg, format_metric, write_curve_csv
from .synthdata import CropSpec, crop_band, generate_corpus, load_dataset, \
    save_dataset, split_by_patient
from .unet import (DESK_DECODER, DESK_ENCODER, FULL_SCALE_DECODER,
                   FULL_SCALE_ENCODER, UNetConfig, build_unet)
from .experiment import ExperimentConfig


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors: exit code 1, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _experiment_config(args) -> ExperimentConfig:
    overrides = read_config_file(args.config) if args.config else {}
    cfg = build_experiment_config(overrides)
    if getattr(args, "paper_arch", False):
        cfg.full_arch = True
    if getattr(args, "postprocess", False):
        cfg.postprocess = True
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg


def _parse_crop(raw: str | None, rows: int, default_kept: int | None = None) -> CropSpec:
    """KEPT or KEPT:OFFSET; a bare KEPT is centered on the image rows."""
    if raw is None:
        kept = rows if default_kept is None else default_kept
        return CropSpec(kept, (rows - kept) // 2)
    try:
        if ":" in raw:
            kept_s, off_s = raw.split(":")
            return CropSpec(int(kept_s), int(off_s))
        kept = int(raw)
        return CropSpec(kept, (rows - kept) // 2)
    except ValueError as e:
        raise ConfigError(f"--crop: {e}") from e


def _split_test_samples(cfg: ExperimentConfig, samples, seed: int):
    _, _, test = split_by_patient(samples, cfg.split, np.random.default_rng([seed, 202]))
    return test


def _cmd_generate(args) -> int:
    cfg = _experiment_config(args)
    patients = args.patients or cfg.patients
    scans = args.scans or cfg.scans
    corpus = generate_corpus(cfg.gen, patients, scans,
                             np.random.default_rng([args.seed, 101]))
    manifest = save_dataset(corpus, args.out)
    print(f"wrote {len(corpus)} samples ({patients} patients) to {manifest}")
    return 0


def _train_seed(seed: int, crop: CropSpec) -> int:
    return int(np.random.SeedSequence([seed, crop.kept, crop.offset, 404])
               .generate_state(1)[0])


def _arch_for_data(full_arch: bool, rows: int, cols: int) -> UNetConfig:
    enc, dec = ((FULL_SCALE_ENCODER, FULL_SCALE_DECODER) if full_arch
                else (DESK_ENCODER, DESK_DECODER))
    try:
        return UNetConfig(enc, dec, 3, 0.2, rows, cols)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _cmd_train(args) -> int:
    cfg = _experiment_config(args)
    samples = load_dataset(args.data)
    if not samples:
        raise ConfigError(f"dataset at {args.data} is empty")
    rows, cols = samples[0].image.shape
    crop = _parse_crop(args.crop, rows)
    if crop.offset + crop.kept > rows:
        raise ConfigError(f"crop {crop.kept}@{crop.offset} exceeds {rows} image rows")
    tr, va, _ = split_by_patient(samples, cfg.split, np.random.default_rng([args.seed, 202]))
    tr = [crop_band(s, crop) for s in tr]
    va = [crop_band(s, crop) for s in va]
    arch = _arch_for_data(cfg.full_arch, crop.kept, cols)
    model = build_unet(arch, np.random.default_rng([args.seed, crop.kept, crop.offset, 303]))
    tc = TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                     batch_size=cfg.batch_size,
                     loss=LossSpec(args.loss, beta=cfg.losses[-1].beta,
                                   epsilon=cfg.losses[-1].epsilon),
                     seed=_train_seed(args.seed, crop),
                     selection_metric=cfg.selection_metric)
    result = train(model, tr, va, tc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out / "checkpoint.cseg")
    lines = ["epoch,train_loss,val_metric"]
    lines += [f"{h.epoch},{h.train_loss:.6f},{h.val_metric:.6f}" for h in result.history]
    (out / "history.csv").write_text("\n".join(lines) + "\n")
    best = result.history[result.best_epoch - 1]
    print(f"trained {args.loss} on {len(tr)} samples (crop {crop.kept}@{crop.offset}); "
          f"best epoch {result.best_epoch} ({cfg.selection_metric}="
          f"{best.val_metric:.4f}); checkpoint at {out / 'checkpoint.cseg'}")
    return 0


def _load_eval_pieces(args):
    cfg = _experiment_config(args)
    model = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data)
    if not samples:
        raise ConfigError(f"dataset at {args.data} is empty")
    rows = samples[0].image.shape[0]
    crop = _parse_crop(args.crop, rows, default_kept=model.config.input_rows)
    if crop.offset + crop.kept > rows:
        raise ConfigError(f"crop {crop.kept}@{crop.offset} exceeds {rows} image rows")
    if crop.kept != model.config.input_rows \
            or samples[0].image.shape[1] != model.config.input_cols:
        raise ConfigError(
            f"checkpoint expects {model.config.input_rows}x{model.config.input_cols} "
            f"inputs but crop {crop.kept}@{crop.offset} of {rows}x"
            f"{samples[0].image.shape[1]} images gives "
            f"{crop.kept}x{samples[0].image.shape[1]}")
    test = _split_test_samples(cfg, samples, args.seed)
    cropped = [crop_band(s, crop) for s in test]
    return cfg, model, test, cropped, crop


def _cmd_evaluate(args) -> int:
    cfg, model, _, cropped, _ = _load_eval_pieces(args)
    detail = evaluate(model, cropped, postprocess=args.postprocess or cfg.postprocess)
    s = detail.summary
    print("  ".join([
        f"sensitivity={format_metric(s.sensitivity)}",
        f"specificity={format_metric(s.specificity)}",
        f"precision={format_metric(s.precision)}",
        f"AUC={format_metric(s.auc)}",
        f"aPr={format_metric(s.apr)}",
        f"Dice={format_metric(s.dice)}",
        f"eDist={format_metric(s.edist)}",
        f"cutoff={s.cutoff:.6g}",
    ]))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if detail.curve is not None:
            write_curve_csv(out / "pr_curve.csv", ("threshold", "precision", "recall"),
                            (detail.curve.thresholds, detail.curve.precision,
                             detail.curve.recall))
            (out / "pr_curve.svg").write_text(curve_svg(
                [("test", detail.curve.recall, detail.curve.precision)],
                "Precision-recall (pooled test pixels)", "recall", "precision"))
        if detail.roc is not None:
            _, fpr, tpr = detail.roc
            write_curve_csv(out / "roc_curve.csv", ("fpr", "tpr"), (fpr, tpr))
            (out / "roc_curve.svg").write_text(curve_svg(
                [("test", fpr, tpr)], "ROC (pooled test pixels)",
                "false positive rate", "true positive rate"))
        print(f"curve artifacts written to {out}")
    return 0


def _cmd_ablate(args) -> int:
    overrides = read_config_file(args.config) if args.config else {}
    cfg = build_experiment_config(overrides)
    if args.paper_arch:
        cfg.full_arch = True
    if args.postprocess:
        cfg.postprocess = True
    if args.workers:
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.seeds = (args.seed,)
    report = run_ablation(cfg, args.out)
    failed = sum(1 for c in report.cells if c.failed)
    print(f"wrote {len(report.rows)} report rows to {Path(args.out) / 'report.csv'}"
          + (f" ({failed} failed cells)" if failed else ""))
    return 0


def _cmd_render(args) -> int:
    cfg, model, test, cropped, crop = _load_eval_pieces(args)
    detail = evaluate(model, cropped, postprocess=args.postprocess or cfg.postprocess)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = test[0].image.shape[0]
    band = (crop.offset, crop.kept) if crop.kept < rows else None
    for sample, pred in zip(test, detail.predictions):
        full_pred = np.zeros_like(sample.mask, dtype=bool)
        full_pred[crop.offset:crop.offset + crop.kept] = pred.astype(bool)
        rgb = render_overlay(sample.image, full_pred, sample.mask, band=band)
        write_ppm(out / f"overlay_{sample.sample_id}.ppm", rgb)
    print(f"wrote {len(test)} overlays to {out}")
    return 0


def _add_common(p, config=True, seed=True):
    if config:
        p.add_argument("--config", help="key=value config file")
    if seed:
        p.add_argument("--seed", type=int, default=0,
                       help="seed for corpus generation and splitting (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cropseg",
                     description="Synthetic band-cropped segmentation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[], help="write a synthetic corpus",
                       description="Generate a synthetic corpus to a directory.")
    _add_common(g)
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--patients", type=int, help="override patient count")
    g.add_argument("--scans", type=int, help="override total scan count")
    g.set_defaults(fn=_cmd_generate)

    t = sub.add_parser("train", help="train one model on a saved dataset",
                       description="Train a model on the train/val splits of a dataset.")
    _add_common(t)
    t.add_argument("--data", required=True, help="dataset directory (from generate)")
    t.add_argument("--out", required=True, help="output directory for the checkpoint")
    t.add_argument("--loss", choices=("bce", "tversky"), default="tversky")
    t.add_argument("--crop", help="rows to keep, KEPT or KEPT:OFFSET (default: all)")
    t.add_argument("--paper-arch", action="store_true",
                   help="use the full-scale 16..512 filter architecture")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split",
                       description="Evaluate a checkpoint on the dataset's test split.")
    _add_common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--crop", help="KEPT or KEPT:OFFSET (default: from the checkpoint)")
    e.add_argument("--out", help="optional directory for PR/ROC artifacts")
    e.add_argument("--postprocess", action="store_true",
                   help="keep only the largest component before localization")
    e.set_defaults(fn=_cmd_evaluate)

    a = sub.add_parser("ablate", help="run the full crop-by-loss ablation grid",
                       description="Run the crop ablation and write report.csv + artifacts.")
    a.add_argument("--config", help="key=value config file")
    a.add_argument("--seed", type=int, default=None,
                   help="run a single seed instead of the configured list")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--workers", type=int, default=None,
                   help="parallel worker processes (default 1)")
    a.add_argument("--paper-arch", action="store_true",
                   help="use the full-scale 16..512 filter architecture")
    a.add_argument("--postprocess", action="store_true",
                   help="keep only the largest component before localization")
    a.set_defaults(fn=_cmd_ablate)

    r = sub.add_parser("render", help="write overlay images for the test split",
                       description="Render TP/FP/FN overlays onto the full-size scans.")
    _add_common(r)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--crop", help="KEPT or KEPT:OFFSET (default: from the checkpoint)")
    r.add_argument("--postprocess", action="store_true")
    r.set_defaults(fn=_cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"cropseg: config error: {e}", file=sys.stderr)
        return 1
    except (CheckpointError, OSError, RuntimeError, ValueError) as e:
        print(f"cropseg: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
