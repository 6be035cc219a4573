"""Pixel-pooled PR/ROC analysis, cut-off selection, and localization metrics.

Scores from the whole test set are pooled into one PR curve; the operating
point maximizes F1 (ties to the highest threshold) and binarization uses
score >= cutoff. A curve with a single distinct threshold comes from a
constant scorer that cannot discriminate, so the cut-off is placed just above
it (empty prediction) unless that lone operating point is already perfect.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import label as cc_label
from scipy.stats import rankdata

from .losses import ConfusionCounts, dsc
from .unet import Model, forward

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)

TP_COLOR = (255, 255, 0)
FP_COLOR = (255, 0, 0)
FN_COLOR = (0, 255, 0)


@dataclass(frozen=True)
class PrCurve:
    """One point per distinct score, thresholds strictly decreasing."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray


@dataclass(frozen=True)
class EvalSummary:
    sensitivity: float
    specificity: float
    precision: float
    auc: float
    apr: float
    dice: float
    edist: float
    cutoff: float


@dataclass
class EvalDetail:
    summary: EvalSummary
    curve: PrCurve | None
    roc: tuple[np.ndarray, np.ndarray, np.ndarray] | None  # thresholds, fpr, tpr
    scores: list[np.ndarray]
    predictions: list[np.ndarray]
    counts: ConfusionCounts


def _flat_scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in size: {s.size} vs {y.size}")
    if s.size == 0:
        raise ValueError("cannot build a curve from zero scores")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary (0/1)")
    return s, y.astype(np.float64)


def pr_curve(scores, labels) -> PrCurve:
    s, y = _flat_scores_labels(scores, labels)
    pos = y.sum()
    if pos == 0:
        raise ValueError("PR curve needs at least one positive label")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # Last index of each distinct-score block.
    ends = np.append(np.nonzero(np.diff(s))[0], s.size - 1)
    tp = np.cumsum(y)[ends]
    pp = ends + 1.0
    return PrCurve(thresholds=s[ends], precision=tp / pp, recall=tp / pos)


def average_precision(curve: PrCurve) -> float:
    """Sum of precision-weighted recall increments, walking recall upward."""
    return float(np.sum(np.diff(curve.recall, prepend=0.0) * curve.precision))


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s, y = _flat_scores_labels(scores, labels)
    pos = y.sum()
    neg = s.size - pos
    if pos == 0 or neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    ends = np.append(np.nonzero(np.diff(s))[0], s.size - 1)
    tp = np.cumsum(y)[ends]
    fp = (ends + 1.0) - tp
    return s[ends], fp / neg, tp / pos


def roc_auc(scores, labels) -> float:
    """Mann-Whitney rank statistic; ties count one half."""
    s, y = _flat_scores_labels(scores, labels)
    pos = int(y.sum())
    neg = s.size - pos
    if pos == 0 or neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def optimal_cutoff(curve: PrCurve) -> float:
    if curve.thresholds.size == 1:
        if curve.precision[0] < 1.0:
            return float(np.nextafter(curve.thresholds[0], np.inf))
        return float(curve.thresholds[0])
    p, r = curve.precision, curve.recall
    denom = p + r
    f1 = np.where(denom > 0, 2.0 * p * r / np.where(denom > 0, denom, 1.0), 0.0)
    return float(curve.thresholds[int(np.argmax(f1))])


def hard_confusion(pred, target) -> ConfusionCounts:
    p = np.asarray(pred)
    y = np.asarray(target)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    for name, a in (("pred", p), ("target", y)):
        if a.dtype != bool and not np.all((a == 0) | (a == 1)):
            raise ValueError(f"{name} must be binary")
    p = p.astype(bool)
    y = y.astype(bool)
    return ConfusionCounts(
        tp=float(np.sum(p & y)), fp=float(np.sum(p & ~y)),
        fn=float(np.sum(~p & y)), tn=float(np.sum(~p & ~y)))


def centroid_distance(gt_mask, pred_mask) -> float:
    """Euclidean distance between foreground centroids; empty prediction -> nan."""
    gt = np.asarray(gt_mask).astype(bool)
    pred = np.asarray(pred_mask).astype(bool)
    if not gt.any():
        raise ValueError("ground-truth mask is empty")
    if not pred.any():
        return float("nan")
    gy, gx = np.nonzero(gt)
    py, px = np.nonzero(pred)
    return float(np.hypot(gy.mean() - py.mean(), gx.mean() - px.mean()))


def largest_component(mask) -> np.ndarray:
    """Keep only the largest 4-connected component; size ties go to the
    component whose first pixel comes earliest in row-major order."""
    m = np.asarray(mask)
    binary = m.astype(bool)
    lab, nlab = cc_label(binary, structure=_FOUR_CONN)
    if nlab == 0:
        return np.zeros_like(m)
    sizes = np.bincount(lab.ravel())[1:]
    best = sizes.max()
    candidates = [l + 1 for l in np.nonzero(sizes == best)[0]]
    if len(candidates) > 1:
        flat = lab.ravel()
        candidates.sort(key=lambda l: int(np.argmax(flat == l)))
    keep = lab == candidates[0]
    return keep.astype(m.dtype) if m.dtype != bool else keep


def render_overlay(image, pred, gt, band: tuple[int, int] | None = None) -> np.ndarray:
    """RGB overlay: TP yellow, FP red, FN green, TN grayscale from the image.

    band = (offset, kept) draws white horizontal lines on the crop boundaries.
    """
    img = np.asarray(image, dtype=np.float64)
    p = np.asarray(pred).astype(bool)
    y = np.asarray(gt).astype(bool)
    if img.ndim != 2 or img.shape != p.shape or img.shape != y.shape:
        raise ValueError("image, pred, and gt must share a 2-D shape")
    gray = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    out = np.repeat(gray[:, :, None], 3, axis=2)
    out[p & y] = TP_COLOR
    out[p & ~y] = FP_COLOR
    out[~p & y] = FN_COLOR
    if band is not None:
        offset, kept = band
        if offset < 0 or kept < 1 or offset + kept > img.shape[0]:
            raise ValueError(f"band {band} does not fit {img.shape[0]} rows")
        out[offset, :] = 255
        out[offset + kept - 1, :] = 255
    return out


def _model_scores(model: Model, samples, batch_size: int) -> list[np.ndarray]:
    scores = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x = np.stack([np.asarray(s.image, dtype=np.float64) for s in chunk])[:, None]
        out = forward(model, x, training=False).data
        scores.extend(out[i, 0] for i in range(out.shape[0]))
    return scores


def evaluate(model: Model, test_set, postprocess: bool = False,
             batch_size: int = 4) -> EvalDetail:
    """Full evaluation detail; `evaluate_model` returns just the summary.

    Pixel statistics come from the raw binarization; the largest-component
    postprocess, when enabled, applies to the localization distance and to the
    prediction maps handed back for rendering.
    """
    if not len(test_set):
        raise ValueError("test set is empty")
    scores = _model_scores(model, test_set, batch_size)
    masks = [np.asarray(s.mask) for s in test_set]
    pooled_s = np.concatenate([s.ravel() for s in scores])
    pooled_y = np.concatenate([m.ravel() for m in masks])
    npos = int(pooled_y.sum())
    nneg = pooled_y.size - npos

    curve = roc = None
    if npos > 0:
        curve = pr_curve(pooled_s, pooled_y)
        apr = average_precision(curve)
        cutoff = optimal_cutoff(curve)
        auc = roc_auc(pooled_s, pooled_y) if nneg > 0 else float("nan")
        if nneg > 0:
            roc = roc_points(pooled_s, pooled_y)
    else:
        # Degenerate pool without positives: threshold-free quantities are
        # undefined and binarization falls back to 0.5.
        apr = auc = float("nan")
        cutoff = 0.5

    raw_preds = [s >= cutoff for s in scores]
    final_preds = [largest_component(p) for p in raw_preds] if postprocess else raw_preds
    counts = hard_confusion(np.concatenate([p.ravel() for p in raw_preds]), pooled_y)
    sens = counts.tp / (counts.tp + counts.fn) if npos > 0 else float("nan")
    spec = counts.tn / (counts.tn + counts.fp) if nneg > 0 else float("nan")
    ppos = counts.tp + counts.fp
    prec = counts.tp / ppos if ppos > 0 else 0.0

    dists = [centroid_distance(m, p) for m, p in zip(masks, final_preds) if m.any()]
    edist = float(np.mean(dists)) if dists else float("nan")

    summary = EvalSummary(sensitivity=float(sens), specificity=float(spec),
                          precision=float(prec), auc=float(auc), apr=float(apr),
                          dice=dsc(counts), edist=edist, cutoff=float(cutoff))
    return EvalDetail(summary=summary, curve=curve, roc=roc, scores=scores,
                      predictions=final_preds, counts=counts)


def evaluate_model(model: Model, test_set, postprocess: bool = False,
                   batch_size: int = 4) -> EvalSummary:
    return evaluate(model, test_set, postprocess=postprocess,
                    batch_size=batch_size).summary
