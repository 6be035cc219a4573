"""Binary model checkpoints: magic, version, architecture block, float32 tensors.

Weights are stored as little-endian float32, so one save/load round trip
quantizes once; every later round trip is bit-stable.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .unet import Model, UNetConfig, _layer_plan

MAGIC = b"CSEG"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(model: Model, path):
    cfg = model.config
    parts = [MAGIC, struct.pack("<B", VERSION)]
    parts.append(struct.pack("<B", len(cfg.encoder_filters)))
    parts.append(struct.pack(f"<{len(cfg.encoder_filters)}H", *cfg.encoder_filters))
    parts.append(struct.pack("<B", len(cfg.decoder_filters)))
    parts.append(struct.pack(f"<{len(cfg.decoder_filters)}H", *cfg.decoder_filters))
    parts.append(struct.pack("<Hd", cfg.kernel_extent, cfg.dropout_rate))
    parts.append(struct.pack("<II", cfg.input_rows, cfg.input_cols))
    parts.append(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", p.data.ndim))
        parts.append(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_config: UNetConfig | None = None) -> Model:
    rd = _Reader(Path(path).read_bytes())
    if rd.take(4) != MAGIC:
        raise CheckpointError(f"bad magic in {path}: not a model checkpoint")
    (version,) = rd.unpack("<B")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    (n_enc,) = rd.unpack("<B")
    enc = rd.unpack(f"<{n_enc}H")
    (n_dec,) = rd.unpack("<B")
    dec = rd.unpack(f"<{n_dec}H")
    kernel, dropout = rd.unpack("<Hd")
    rows, cols = rd.unpack("<II")
    try:
        config = UNetConfig(enc, dec, kernel, dropout, rows, cols)
    except ValueError as e:
        raise CheckpointError(f"checkpoint holds an invalid architecture: {e}") from e
    if expected_config is not None and config != expected_config:
        raise CheckpointError(
            f"checkpoint architecture {config} does not match expected {expected_config}"
        )
    (count,) = rd.unpack("<I")
    loaded: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = rd.unpack("<H")
        name = rd.take(nlen).decode("utf-8")
        (rank,) = rd.unpack("<B")
        shape = rd.unpack(f"<{rank}I")
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(rd.take(4 * size), dtype="<f4").reshape(shape)
        loaded[name] = data.astype(np.float64)
    if rd.off != len(rd.buf):
        raise CheckpointError("trailing bytes after checkpoint payload")

    expected_names = []
    for lname, cin, cout, k in _layer_plan(config):
        expected_names.append((f"{lname}.weight", (cout, cin, k, k)))
        expected_names.append((f"{lname}.bias", (cout,)))
    if set(loaded) != {n for n, _ in expected_names}:
        raise CheckpointError("checkpoint parameter names do not match the architecture")
    params: dict[str, Tensor] = {}
    for name, shape in expected_names:
        if loaded[name].shape != shape:
            raise CheckpointError(f"checkpoint tensor {name} has shape "
                                  f"{loaded[name].shape}, expected {shape}")
        params[name] = Tensor(loaded[name], requires_grad=True)
    return Model(config, params)
