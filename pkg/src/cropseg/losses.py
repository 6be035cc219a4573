"""Segmentation losses and the confusion-count algebra they share.

BCE and Tversky are fused graph nodes with analytic gradients; the plain
count-based metrics (dsc, tversky_index) also serve evaluation code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _accum, _node

_BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class ConfusionCounts:
    """tp/fp/fn/tn counts; soft (real-valued) or hard (integer-valued)."""

    tp: float
    fp: float
    fn: float
    tn: float = 0.0


@dataclass(frozen=True)
class LossSpec:
    """Which loss to train with. beta/epsilon only apply to tversky."""

    kind: str
    beta: float = 0.5
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("bce", "tversky"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


def _target_array(target, shape) -> np.ndarray:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if t.shape != shape:
        raise ValueError(f"target shape {t.shape} does not match prediction {shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("target must be binary (0/1)")
    return t


def soft_confusion(pred: np.ndarray, target: np.ndarray) -> ConfusionCounts:
    """Soft counts from probabilities: tp = sum(p*y), fp = sum(p*(1-y)), fn = sum((1-p)*y)."""
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    y = _target_array(target, p.shape)
    tp = float(np.sum(p * y))
    fp = float(np.sum(p * (1.0 - y)))
    fn = float(np.sum((1.0 - p) * y))
    tn = float(np.sum((1.0 - p) * (1.0 - y)))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def dsc(counts: ConfusionCounts) -> float:
    """Dice coefficient 2tp/(2tp+fp+fn); empty-vs-empty is defined as 1.0."""
    denom = (2.0 * counts.tp + counts.fp) + counts.fn
    if denom == 0.0:
        return 1.0
    return 2.0 * counts.tp / denom


def tversky_index(counts: ConfusionCounts, beta: float) -> float:
    """tp/(tp + beta*fp + (1-beta)*fn); beta = 0.5 reduces exactly to dsc."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    denom = (counts.tp + beta * counts.fp) + (1.0 - beta) * counts.fn
    if denom == 0.0:
        return 1.0 if counts.fp == 0.0 and counts.fn == 0.0 else 0.0
    return counts.tp / denom


def bce_loss(pred: Tensor, target) -> Tensor:
    """Pixel-mean binary cross-entropy with predictions clamped to [1e-7, 1-1e-7]."""
    if not isinstance(pred, Tensor):
        pred = Tensor(pred)
    y = _target_array(target, pred.data.shape)
    lo, hi = _BCE_CLAMP, 1.0 - _BCE_CLAMP
    p = np.clip(pred.data, lo, hi)
    n = p.size
    val = np.asarray(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean())
    out = _node(val, (pred,))
    if out.requires_grad:
        # Clamp is part of the function: gradient is zero where it saturates.
        inside = (pred.data >= lo) & (pred.data <= hi)
        def _backward():
            dp = (-(y / p) + (1.0 - y) / (1.0 - p)) / n
            _accum(pred, out.grad * dp * inside)
        out._backward = _backward
    return out


def tversky_loss(pred: Tensor, target, beta: float = 0.5,
                 epsilon: float = 1e-6) -> Tensor:
    """1 - (tp+eps)/(tp + beta*fp + (1-beta)*fn + eps) over batch-pooled soft counts."""
    if not isinstance(pred, Tensor):
        pred = Tensor(pred)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    y = _target_array(target, pred.data.shape)
    p = pred.data
    tp = float(np.sum(p * y))
    fp = float(np.sum(p * (1.0 - y)))
    fn = float(np.sum((1.0 - p) * y))
    num = tp + epsilon
    den = tp + beta * fp + (1.0 - beta) * fn + epsilon
    out = _node(np.asarray(1.0 - num / den), (pred,))
    if out.requires_grad:
        def _backward():
            # Quotient rule on T = num/den with dnum/dp_i = y_i and
            # dden/dp_i = y_i + beta*(1-y_i) - (1-beta)*y_i.
            dden = y + beta * (1.0 - y) - (1.0 - beta) * y
            dT = (y * den - num * dden) / (den * den)
            _accum(pred, out.grad * (-dT))
        out._backward = _backward
    return out


def segmentation_loss(pred: Tensor, target, spec: LossSpec) -> Tensor:
    """Dispatch to the configured loss."""
    if spec.kind == "bce":
        return bce_loss(pred, target)
    return tversky_loss(pred, target, beta=spec.beta, epsilon=spec.epsilon)
