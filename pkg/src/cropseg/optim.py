"""Adam and the epoch-based training loop with best-epoch snapshotting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import LossSpec, ConfusionCounts, dsc, segmentation_loss
from .unet import Model, forward


class TrainingError(RuntimeError):
    """Raised when optimization produces a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 1e-3
    batch_size: int = 4
    loss: LossSpec = field(default_factory=lambda: LossSpec("bce"))
    seed: int = 0
    selection_metric: str = "validation_dice"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.selection_metric not in ("validation_dice", "validation_loss"):
            raise ValueError(f"unknown selection metric {self.selection_metric!r}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_metric: float


@dataclass
class TrainResult:
    model: Model
    best_epoch: int
    history: list[EpochStats]


class Adam:
    """Adam with bias correction, stepping a model's parameter registry."""

    def __init__(self, model: Model, learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.model = model
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in model.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in model.params.items()}

    def step(self, grads: dict[str, np.ndarray] | None = None):
        params = self.model.params
        if grads is None:
            grads = {k: p.grad for k, p in params.items()}
        if set(grads) != set(params):
            raise ValueError("gradient names do not match the parameter registry")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if g is None or np.shape(g) != p.data.shape:
                raise ValueError(f"gradient for {name} is missing or misshapen")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _stack(samples, indices) -> tuple[np.ndarray, np.ndarray]:
    imgs = np.stack([np.asarray(samples[i].image, dtype=np.float64) for i in indices])
    masks = np.stack([np.asarray(samples[i].mask, dtype=np.float64) for i in indices])
    return imgs[:, None, :, :], masks[:, None, :, :]


def _validation_scores(model: Model, val_set, batch_size: int) -> np.ndarray:
    chunks = []
    for start in range(0, len(val_set), batch_size):
        idx = range(start, min(start + batch_size, len(val_set)))
        x, _ = _stack(val_set, idx)
        chunks.append(forward(model, x, training=False).data)
    return np.concatenate(chunks, axis=0)


def _validation_metric(model: Model, val_set, config: TrainConfig) -> tuple[float, float]:
    """Returns (reported metric, comparable score where higher is better)."""
    scores = _validation_scores(model, val_set, config.batch_size)
    _, masks = _stack(val_set, range(len(val_set)))
    if config.selection_metric == "validation_loss":
        val = float(segmentation_loss(scores.ravel(), masks.ravel(), config.loss).data)
        return val, -val
    pred = scores >= 0.5
    y = masks > 0.5
    counts = ConfusionCounts(
        tp=float(np.sum(pred & y)),
        fp=float(np.sum(pred & ~y)),
        fn=float(np.sum(~pred & y)),
        tn=float(np.sum(~pred & ~y)),
    )
    val = dsc(counts)
    return val, val


def train(model: Model, train_set, val_set, config: TrainConfig) -> TrainResult:
    """Full-pass epochs with seeded shuffling; returns the best-epoch snapshot.

    Ties on the validation metric keep the earlier epoch. The same per-epoch
    rng drives both the shuffle and dropout, so a (seed, epoch) pair fully
    determines the pass.
    """
    if not len(train_set) or not len(val_set):
        raise ValueError("train and validation sets must be non-empty")
    opt = Adam(model, learning_rate=config.learning_rate)
    history: list[EpochStats] = []
    best_score = -np.inf
    best_epoch = 0
    best_state = model.snapshot()
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        perm = rng.permutation(n)
        loss_sum = 0.0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            batch = perm[start:start + config.batch_size]
            x, y = _stack(train_set, batch)
            model.zero_grad()
            pred = forward(model, x, training=True, rng=rng)
            loss = segmentation_loss(pred, y, config.loss)
            lval = float(loss.data)
            if not np.isfinite(lval):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            loss.backward()
            opt.step()
            loss_sum += lval * len(batch)
        train_loss = loss_sum / n
        val_metric, score = _validation_metric(model, val_set, config)
        if score > best_score:
            best_score = score
            best_epoch = epoch
            best_state = model.snapshot()
        history.append(EpochStats(epoch, train_loss, val_metric))
    model.load_snapshot(best_state)
    return TrainResult(model=model, best_epoch=best_epoch, history=history)
