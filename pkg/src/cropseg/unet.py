"""U-Net built from the tensor-core ops: config, parameter registry, forward pass.

The encoder halves spatial extents between blocks, the decoder mirrors it with
nearest-neighbour upsampling, skip concatenation, and two convolutions per
block; a 1x1 convolution plus sigmoid produces the per-pixel probability map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

FULL_SCALE_ENCODER = (16, 32, 64, 128, 256, 512)
FULL_SCALE_DECODER = (256, 128, 64, 32, 32)
DESK_ENCODER = (8, 16, 32, 64)
DESK_DECODER = (32, 16, 8)


@dataclass(frozen=True)
class UNetConfig:
    encoder_filters: tuple[int, ...] = FULL_SCALE_ENCODER
    decoder_filters: tuple[int, ...] = FULL_SCALE_DECODER
    kernel_extent: int = 3
    dropout_rate: float = 0.2
    input_rows: int = 256
    input_cols: int = 256

    def __post_init__(self):
        object.__setattr__(self, "encoder_filters", tuple(int(f) for f in self.encoder_filters))
        object.__setattr__(self, "decoder_filters", tuple(int(f) for f in self.decoder_filters))
        if len(self.encoder_filters) < 2:
            raise ValueError("need at least two encoder blocks")
        if len(self.decoder_filters) != len(self.encoder_filters) - 1:
            raise ValueError(
                f"decoder must have {len(self.encoder_filters) - 1} blocks to mirror "
                f"{len(self.encoder_filters)} encoder blocks, got {len(self.decoder_filters)}"
            )
        if any(f <= 0 for f in self.encoder_filters + self.decoder_filters):
            raise ValueError("filter counts must be positive")
        if self.kernel_extent <= 0 or self.kernel_extent % 2 == 0:
            raise ValueError(f"kernel extent must be odd and positive, got {self.kernel_extent}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        div = self.pool_divisor
        for axis, extent in (("rows", self.input_rows), ("cols", self.input_cols)):
            if extent <= 0 or extent % div:
                raise ValueError(
                    f"input {axis} must be a positive multiple of {div} "
                    f"({len(self.encoder_filters) - 1} pooling stages), got {extent}"
                )

    @property
    def pool_divisor(self) -> int:
        return 2 ** (len(self.encoder_filters) - 1)


def desk_config(rows: int = 64, cols: int = 64) -> UNetConfig:
    """Laptop-scale architecture: same topology, about 1% of the full parameter count."""
    return UNetConfig(DESK_ENCODER, DESK_DECODER, 3, 0.2, rows, cols)


def full_scale_config(rows: int = 256, cols: int = 256) -> UNetConfig:
    return UNetConfig(FULL_SCALE_ENCODER, FULL_SCALE_DECODER, 3, 0.2, rows, cols)


def _layer_plan(config: UNetConfig) -> list[tuple[str, int, int, int]]:
    """(name, cin, cout, kernel) for every convolution, in forward order."""
    k = config.kernel_extent
    plan: list[tuple[str, int, int, int]] = []
    prev = 1
    for i, f in enumerate(config.encoder_filters):
        plan.append((f"enc{i}.conv1", prev, f, k))
        plan.append((f"enc{i}.conv2", f, f, k))
        prev = f
    n = len(config.encoder_filters)
    for j, d in enumerate(config.decoder_filters):
        skip = config.encoder_filters[n - 2 - j]
        plan.append((f"dec{j}.conv1", prev + skip, d, k))
        plan.append((f"dec{j}.conv2", d, d, k))
        prev = d
    plan.append(("head", prev, 1, 1))
    return plan


def parameter_count(config: UNetConfig) -> int:
    return sum(co * ci * k * k + co for _, ci, co, k in _layer_plan(config))


class Model:
    """A U-Net: config plus an ordered name -> Tensor parameter registry."""

    def __init__(self, config: UNetConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def parameters(self):
        return self.params.values()

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_snapshot(self, state: dict[str, np.ndarray]):
        if set(state) != set(self.params):
            raise ValueError("snapshot parameter names do not match this model")
        for name, arr in state.items():
            p = self.params[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"snapshot shape mismatch for {name}")
            p.data = np.asarray(arr, dtype=np.float64).copy()


def build_unet(config: UNetConfig, rng: np.random.Generator) -> Model:
    """He-style uniform init, bound sqrt(6/fan_in); biases start at zero."""
    params: dict[str, Tensor] = {}
    for name, cin, cout, k in _layer_plan(config):
        bound = np.sqrt(6.0 / (cin * k * k))
        w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
        params[f"{name}.weight"] = Tensor(w, requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(cout), requires_grad=True)
    return Model(config, params)


def _conv_block(x: Tensor, params: dict[str, Tensor], name: str) -> Tensor:
    for conv in ("conv1", "conv2"):
        x = ad.conv2d(x, params[f"{name}.{conv}.weight"], params[f"{name}.{conv}.bias"])
        x = ad.relu(x)
    return x


def forward(model: Model, x, training: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Probability map with the input's batch layout ([1,H,W] or [B,1,H,W])."""
    cfg = model.config
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float64))
    if x.data.ndim == 2:
        x = Tensor(x.data[None])
    if x.data.ndim not in (3, 4):
        raise ValueError(f"expected [1,H,W] or [B,1,H,W] input, got shape {x.data.shape}")
    if x.data.shape[-3] != 1:
        raise ValueError(f"expected a single input channel, got {x.data.shape[-3]}")
    if x.data.shape[-2:] != (cfg.input_rows, cfg.input_cols):
        raise ValueError(
            f"input extents {x.data.shape[-2:]} do not match configured "
            f"({cfg.input_rows}, {cfg.input_cols})"
        )
    if training and cfg.dropout_rate > 0.0 and rng is None:
        raise ValueError("training forward pass needs an rng for dropout")

    n = len(cfg.encoder_filters)
    skips: list[Tensor] = []
    h = x
    for i in range(n):
        h = _conv_block(h, model.params, f"enc{i}")
        if i < n - 1:
            skips.append(h)
            h = ad.maxpool2(h)
    h = ad.dropout(h, cfg.dropout_rate, rng=rng, training=training)
    for j in range(len(cfg.decoder_filters)):
        h = ad.upsample2(h)
        h = ad.concat_channels(skips[n - 2 - j], h)
        h = _conv_block(h, model.params, f"dec{j}")
    h = ad.conv2d(h, model.params["head.weight"], model.params["head.bias"])
    return ad.sigmoid(h)
