"""Crop ablation harness: corpus generation, per-cell training, report emission.

A cell is one (seed, crop, loss) combination. Every cell regenerates its
seed's corpus deterministically from the seed alone, so cells can run in any
order or in parallel without changing results. Within a (seed, crop) pair both
losses share the same weight init and shuffle stream, making the loss
comparison paired.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import EvalSummary, PrCurve, evaluate, render_overlay
from .imageio import write_ppm
from .losses import LossSpec
from .optim import TrainConfig, TrainingError, train
from .report import REPORT_COLUMNS, curve_svg, write_curve_csv, write_report_csv
from .synthdata import CropSpec, GenParams, crop_band, generate_corpus, split_by_patient
from .unet import (DESK_DECODER, DESK_ENCODER, FULL_SCALE_DECODER,
                   FULL_SCALE_ENCODER, UNetConfig, build_unet)

_METRIC_FIELDS = ("sensitivity", "specificity", "precision", "auc", "apr",
                  "dice", "edist")


class ConfigError(ValueError):
    """Invalid experiment configuration (bad key, value, or combination)."""


def default_crops(gen: GenParams, divisor: int = 8) -> tuple[CropSpec, ...]:
    """Full size plus two band-centered crops at ~62.5% and ~37.5% of the rows."""
    rows = gen.rows
    center = 0.5 * (gen.band[0] + gen.band[1]) * rows
    crops = [CropSpec(rows, 0)]
    for frac in (0.625, 0.375):
        kept = max(divisor, int(np.floor(frac * rows / divisor + 0.5)) * divisor)
        kept = min(kept, rows)
        offset = int(np.clip(round(center - kept / 2), 0, rows - kept))
        crops.append(CropSpec(kept, offset))
    return tuple(crops)


@dataclass
class ExperimentConfig:
    gen: GenParams = field(default_factory=GenParams)
    patients: int = 24
    scans: int = 32
    split: tuple[float, float, float] = (100 / 120, 10 / 120, 10 / 120)
    crops: tuple[CropSpec, ...] = (CropSpec(64, 0), CropSpec(40, 12), CropSpec(24, 20))
    losses: tuple[LossSpec, ...] = (LossSpec("bce"), LossSpec("tversky"))
    seeds: tuple[int, ...] = (0,)
    epochs: int = 40
    learning_rate: float = 1e-3
    batch_size: int = 4
    selection_metric: str = "validation_dice"
    full_arch: bool = False
    postprocess: bool = False
    workers: int = 1

    def arch_for(self, crop: CropSpec) -> UNetConfig:
        enc, dec = ((FULL_SCALE_ENCODER, FULL_SCALE_DECODER) if self.full_arch
                    else (DESK_ENCODER, DESK_DECODER))
        return UNetConfig(enc, dec, 3, 0.2, crop.kept, self.gen.cols)


def validate_config(cfg: ExperimentConfig):
    if cfg.patients < 3:
        raise ConfigError(f"need at least 3 patients for a 3-way split, got {cfg.patients}")
    if cfg.scans < cfg.patients:
        raise ConfigError(f"scans ({cfg.scans}) must cover every patient ({cfg.patients})")
    if len(cfg.split) != 3 or any(f <= 0 for f in cfg.split) \
            or abs(sum(cfg.split) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be positive and sum to 1, got {cfg.split}")
    if not cfg.crops:
        raise ConfigError("need at least one crop")
    for crop in cfg.crops:
        if crop.offset + crop.kept > cfg.gen.rows:
            raise ConfigError(f"crop {crop.kept}@{crop.offset} exceeds "
                              f"{cfg.gen.rows} image rows")
        try:
            cfg.arch_for(crop)
        except ValueError as e:
            raise ConfigError(f"crop {crop.kept}@{crop.offset}: {e}") from e
    if not cfg.losses:
        raise ConfigError("need at least one loss")
    if not cfg.seeds or len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError(f"seeds must be non-empty and unique, got {cfg.seeds}")
    try:
        TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                    batch_size=cfg.batch_size, selection_metric=cfg.selection_metric)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if cfg.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {cfg.workers}")


@dataclass
class CellResult:
    seed: int
    crop: CropSpec
    loss: LossSpec
    failed: bool = False
    error: str = ""
    summary: EvalSummary | None = None
    best_epoch: int = 0
    truncated: tuple[int, int, int] = (0, 0, 0)
    curve: PrCurve | None = None
    roc: tuple | None = None
    overlays: list = field(default_factory=list)  # (sample_id, rgb array)

    @property
    def tag(self) -> str:
        return f"ir{self.crop.kept:03d}-{self.loss.kind}-s{self.seed}"


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    cells: list[CellResult]
    rows: list[tuple]         # (ir, loss, 7 metrics) in canonical order
    median_rows: list[tuple]  # one per (loss, crop), medians over seeds

    def row_for(self, loss_kind: str, kept: int, seed: int) -> dict:
        for cell, row in zip(self.cells, self.rows):
            if (cell.loss.kind, cell.crop.kept, cell.seed) == (loss_kind, kept, seed):
                return dict(zip(REPORT_COLUMNS, row))
        raise KeyError(f"no cell {loss_kind}/{kept}/{seed}")

    def median_for(self, loss_kind: str, kept: int) -> dict:
        for row in self.median_rows:
            if (row[0], row[1]) == (kept, loss_kind):
                return dict(zip(REPORT_COLUMNS, row))
        raise KeyError(f"no median row {loss_kind}/{kept}")


def _crop_split(split, crop):
    cropped = [crop_band(s, crop) for s in split]
    return cropped, sum(1 for s in cropped if s.truncated)


def run_cell(cfg: ExperimentConfig, seed: int, crop: CropSpec,
             loss: LossSpec) -> CellResult:
    """Train and evaluate one grid cell; deterministic in its arguments."""
    corpus = generate_corpus(cfg.gen, cfg.patients, cfg.scans,
                             np.random.default_rng([seed, 101]))
    tr, va, te = split_by_patient(corpus, cfg.split, np.random.default_rng([seed, 202]))
    tr, t_tr = _crop_split(tr, crop)
    va, t_va = _crop_split(va, crop)
    te, t_te = _crop_split(te, crop)
    truncated = (t_tr, t_va, t_te)
    arch = cfg.arch_for(crop)
    # Same init and shuffle stream for every loss in this (seed, crop) pair.
    model = build_unet(arch, np.random.default_rng([seed, crop.kept, crop.offset, 303]))
    train_seed = int(np.random.SeedSequence(
        [seed, crop.kept, crop.offset, 404]).generate_state(1)[0])
    tc = TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                     batch_size=cfg.batch_size, loss=loss, seed=train_seed,
                     selection_metric=cfg.selection_metric)
    try:
        result = train(model, tr, va, tc)
    except TrainingError as e:
        return CellResult(seed=seed, crop=crop, loss=loss, failed=True,
                          error=str(e), truncated=truncated)
    detail = evaluate(result.model, te, postprocess=cfg.postprocess,
                      batch_size=cfg.batch_size)
    overlays = [(s.sample_id, render_overlay(s.image, pred, s.mask))
                for s, pred in zip(te, detail.predictions)]
    return CellResult(seed=seed, crop=crop, loss=loss, summary=detail.summary,
                      best_epoch=result.best_epoch, truncated=truncated,
                      curve=detail.curve, roc=detail.roc, overlays=overlays)


def _cell_star(args):
    return run_cell(*args)


def _round4(x: float) -> float:
    return float(np.round(x, 4)) if np.isfinite(x) else float("nan")


def _cell_row(cell: CellResult) -> tuple:
    if cell.failed or cell.summary is None:
        metrics = [float("nan")] * len(_METRIC_FIELDS)
    else:
        metrics = [_round4(getattr(cell.summary, f)) for f in _METRIC_FIELDS]
    return (cell.crop.kept, cell.loss.kind, *metrics)


def _median_rows(cfg: ExperimentConfig, cells: list[CellResult],
                 rows: list[tuple]) -> list[tuple]:
    out = []
    for loss in cfg.losses:
        for crop in cfg.crops:
            group = [row for cell, row in zip(cells, rows)
                     if cell.loss.kind == loss.kind and cell.crop == crop
                     and not cell.failed]
            meds = []
            for i in range(len(_METRIC_FIELDS)):
                vals = np.array([row[2 + i] for row in group], dtype=np.float64)
                if vals.size == 0:
                    meds.append(float("nan"))
                    continue
                # nan orders as worst: +inf for the distance, -inf otherwise.
                worst = np.inf if _METRIC_FIELDS[i] == "edist" else -np.inf
                med = float(np.median(np.where(np.isnan(vals), worst, vals)))
                meds.append(_round4(med) if np.isfinite(med) else float("nan"))
            out.append((crop.kept, loss.kind, *meds))
    return out


def run_ablation(cfg: ExperimentConfig, out_dir=None) -> ExperimentReport:
    """Run the full grid; when out_dir is given, also write every artifact."""
    validate_config(cfg)
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("ok")
        probe.unlink()
    jobs = [(cfg, seed, crop, loss)
            for loss in cfg.losses for crop in cfg.crops for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            cells = list(pool.map(_cell_star, jobs))
    else:
        cells = [run_cell(*job) for job in jobs]
    rows = [_cell_row(c) for c in cells]
    report = ExperimentReport(config=cfg, cells=cells, rows=rows,
                              median_rows=_median_rows(cfg, cells, rows))
    if out is not None:
        emit_report(report, out)
    return report


def emit_report(report: ExperimentReport, out_dir):
    """report.csv, seed medians, per-cell curves and overlays, run metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(out / "report.csv", report.rows)
    write_report_csv(out / "report_medians.csv", report.median_rows)
    for cell in report.cells:
        cdir = out / "cells" / cell.tag
        cdir.mkdir(parents=True, exist_ok=True)
        if cell.curve is not None:
            write_curve_csv(cdir / "pr_curve.csv", ("threshold", "precision", "recall"),
                            (cell.curve.thresholds, cell.curve.precision,
                             cell.curve.recall))
            svg = curve_svg([(cell.tag, cell.curve.recall, cell.curve.precision)],
                            "Precision-recall (pooled test pixels)",
                            "recall", "precision")
            (cdir / "pr_curve.svg").write_text(svg)
        if cell.roc is not None:
            _, fpr, tpr = cell.roc
            write_curve_csv(cdir / "roc_curve.csv", ("fpr", "tpr"), (fpr, tpr))
            svg = curve_svg([(cell.tag, fpr, tpr)],
                            "ROC (pooled test pixels)",
                            "false positive rate", "true positive rate")
            (cdir / "roc_curve.svg").write_text(svg)
        for sample_id, rgb in cell.overlays:
            write_ppm(cdir / f"overlay_{sample_id}.ppm", rgb)
    (out / "run_metadata.txt").write_text(_metadata_text(report))


def _metadata_text(report: ExperimentReport) -> str:
    cfg = report.config
    g = cfg.gen
    lines = [
        f"tool_version: {__version__}",
        f"corpus: {cfg.patients} patients, {cfg.scans} scans, {g.rows}x{g.cols} px",
        f"generator: radius={g.radius_range}, contrast={g.contrast_range} "
        f"(|c| >= {g.min_contrast}), band={g.band}, vessels={g.vessel_count}, "
        f"noise_std={g.noise_std}, flip_probability={g.flip_probability}",
        f"split_fractions: train={cfg.split[0]:.6f}, val={cfg.split[1]:.6f}, "
        f"test={cfg.split[2]:.6f} (patient-grouped)",
        "crops: " + ", ".join(f"{c.kept}@{c.offset}" for c in cfg.crops),
        "losses: " + ", ".join(
            l.kind if l.kind == "bce" else
            f"{l.kind}(beta={l.beta}, epsilon={l.epsilon})" for l in cfg.losses),
        "seeds: " + ",".join(str(s) for s in cfg.seeds),
        f"architecture: encoder={cfg.arch_for(cfg.crops[0]).encoder_filters}, "
        f"decoder={cfg.arch_for(cfg.crops[0]).decoder_filters}, kernel=3, dropout=0.2",
        "parameter_init: uniform with bound sqrt(6/fan_in), zero biases",
        f"optimizer: adam lr={cfg.learning_rate} beta1=0.9 beta2=0.999 eps=1e-08",
        f"epochs: {cfg.epochs}",
        f"batch_size: {cfg.batch_size} (last partial batch kept)",
        f"model_selection: best {cfg.selection_metric} per epoch, ties keep the "
        "earlier epoch (dice binarizes at 0.5)",
        "bce_clamp: predictions clamped to [1e-07, 1 - 1e-07]",
        "tversky_aggregation: soft counts pooled over the whole batch",
        "cutoff_rule: max F1 on the pooled PR curve, ties to the highest "
        "threshold; a single-threshold curve binarizes empty unless its lone "
        "point is perfect",
        "binarization: score >= cutoff",
        "edist: mean per-image centroid distance; any empty prediction makes it "
        "nan; images with empty ground truth are excluded",
        "median_rule: per (loss, crop) over seeds, failed cells excluded, nan "
        "ordered as worst",
        f"postprocess_largest_component: {'on' if cfg.postprocess else 'off'}",
        "decoder: nearest-neighbour upsample, skip concat, two convs per block",
        "padding: zero 'same' everywhere",
        "row_order: loss-major, then crop, then seed",
    ]
    for cell in report.cells:
        t = cell.truncated
        lines.append(f"truncated[{cell.tag}]: train={t[0]} val={t[1]} test={t[2]}")
    failed = [c for c in report.cells if c.failed]
    if failed:
        for c in failed:
            lines.append(f"failed[{c.tag}]: {c.error}")
    else:
        lines.append("failed_cells: none")
    return "\n".join(lines) + "\n"


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_bool(key: str, val: str) -> bool:
    v = val.strip().lower()
    if v in _BOOL_TRUE:
        return True
    if v in _BOOL_FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {val!r}")


def _parse_crops(val: str, gen: GenParams) -> tuple[CropSpec, ...]:
    crops = []
    center = 0.5 * (gen.band[0] + gen.band[1]) * gen.rows
    for item in val.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            if ":" in item:
                kept_s, off_s = item.split(":")
                crops.append(CropSpec(int(kept_s), int(off_s)))
            else:
                kept = int(item)
                offset = int(np.clip(round(center - kept / 2), 0, max(gen.rows - kept, 0)))
                crops.append(CropSpec(kept, offset))
        except ValueError as e:
            raise ConfigError(f"crops: bad entry {item!r}: {e}") from e
    if not crops:
        raise ConfigError("crops: empty list")
    return tuple(crops)


def read_config_file(path) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def build_experiment_config(overrides: dict[str, str]) -> ExperimentConfig:
    """Apply flat overrides onto the defaults; every field is addressable."""
    ov = dict(overrides)

    def pop(key, default, conv):
        if key not in ov:
            return default
        raw = ov.pop(key)
        try:
            return conv(raw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{key}: {e}") from e

    base = GenParams()
    try:
        gen = GenParams(
            rows=pop("rows", base.rows, int),
            cols=pop("cols", base.cols, int),
            radius_range=(pop("radius_min", base.radius_range[0], float),
                          pop("radius_max", base.radius_range[1], float)),
            contrast_range=(pop("contrast_min", base.contrast_range[0], float),
                            pop("contrast_max", base.contrast_range[1], float)),
            min_contrast=pop("min_contrast", base.min_contrast, float),
            band=(pop("band_lo", base.band[0], float),
                  pop("band_hi", base.band[1], float)),
            vessel_count=(pop("vessels_min", base.vessel_count[0], int),
                          pop("vessels_max", base.vessel_count[1], int)),
            noise_std=pop("noise_std", base.noise_std, float),
            flip_probability=pop("flip_probability", base.flip_probability, float),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e

    beta = pop("beta", 0.5, float)
    epsilon = pop("epsilon", 1e-6, float)

    def parse_losses(raw: str) -> tuple[LossSpec, ...]:
        out = []
        for item in raw.split(","):
            kind = item.strip()
            if not kind:
                continue
            try:
                out.append(LossSpec(kind, beta=beta, epsilon=epsilon))
            except ValueError as e:
                raise ConfigError(f"losses: {e}") from e
        if not out:
            raise ConfigError("losses: empty list")
        return tuple(out)

    def parse_seeds(raw: str) -> tuple[int, ...]:
        try:
            return tuple(int(s) for s in raw.split(",") if s.strip())
        except ValueError as e:
            raise ConfigError(f"seeds: {e}") from e

    defaults = ExperimentConfig(gen=gen)
    cfg = ExperimentConfig(
        gen=gen,
        patients=pop("patients", defaults.patients, int),
        scans=pop("scans", defaults.scans, int),
        split=(pop("split_train", defaults.split[0], float),
               pop("split_val", defaults.split[1], float),
               pop("split_test", defaults.split[2], float)),
        crops=pop("crops", default_crops(gen) if gen.rows != 64 else defaults.crops,
                  lambda raw: _parse_crops(raw, gen)),
        losses=pop("losses", (LossSpec("bce", beta, epsilon),
                              LossSpec("tversky", beta, epsilon)), parse_losses),
        seeds=pop("seeds", defaults.seeds, parse_seeds),
        epochs=pop("epochs", defaults.epochs, int),
        learning_rate=pop("learning_rate", defaults.learning_rate, float),
        batch_size=pop("batch_size", defaults.batch_size, int),
        selection_metric=pop("selection_metric", defaults.selection_metric, str),
        full_arch=pop("full_arch", defaults.full_arch,
                      lambda v: _parse_bool("full_arch", v)),
        postprocess=pop("postprocess", defaults.postprocess,
                        lambda v: _parse_bool("postprocess", v)),
        workers=pop("workers", defaults.workers, int),
    )
    if ov:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(ov))}")
    validate_config(cfg)
    return cfg
