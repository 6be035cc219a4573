"""Reverse-mode automatic differentiation over float64 numpy arrays.

Ops are closures that record their backward pass on the output node; calling
``backward()`` on a scalar result walks the recorded graph in reverse
topological order and accumulates gradients into every tensor that requires
them. The op set is exactly what the U-Net and its losses need.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Smallest representable step inside (0, 1); sigmoid outputs are clipped to
# this open interval so downstream logs and divisions stay finite.
_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


class Tensor:
    """A float64 array with an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        # Leaf tensors start with exact-zero gradients so parameters that
        # never influence a loss still report zeros, not stale values.
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        """Run reverse-mode accumulation from this scalar node."""
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        order = _toposort(self)
        _accum(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative postorder; graphs are shallow but this avoids recursion limits.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    # Only grad-requiring parents join the backward graph.
    out._parents = tuple(p for p in parents if p.requires_grad)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _batched(data: np.ndarray) -> tuple[np.ndarray, bool]:
    """Promote [C,H,W] to [1,C,H,W]; 4-D passes through."""
    if data.ndim == 3:
        return data[None], True
    if data.ndim == 4:
        return data, False
    raise ValueError(f"expected a 3-D or 4-D tensor, got ndim {data.ndim}")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = _node(a.data + b.data, (a, b))
    if out.requires_grad:
        def _backward():
            if a.requires_grad:
                _accum(a, out.grad)
            if b.requires_grad:
                _accum(b, out.grad)
        out._backward = _backward
    return out


def mul(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = float(b)
        out = _node(a.data * c, (a,))
        if out.requires_grad:
            def _backward():
                _accum(a, out.grad * c)
            out._backward = _backward
        return out
    b = _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = _node(a.data * b.data, (a, b))
    if out.requires_grad:
        def _backward():
            if a.requires_grad:
                _accum(a, out.grad * b.data)
            if b.requires_grad:
                _accum(b, out.grad * a.data)
        out._backward = _backward
    return out


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _node(np.asarray(x.data.sum()), (x,))
    if out.requires_grad:
        def _backward():
            _accum(x, np.broadcast_to(out.grad, x.data.shape))
        out._backward = _backward
    return out


def tmean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    out = _node(np.asarray(x.data.mean()), (x,))
    if out.requires_grad:
        def _backward():
            _accum(x, np.broadcast_to(out.grad / n, x.data.shape))
        out._backward = _backward
    return out


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _node(np.maximum(x.data, 0.0), (x,))
    if out.requires_grad:
        mask = x.data > 0
        def _backward():
            _accum(x, out.grad * mask)
        out._backward = _backward
    return out


def sigmoid(z: Tensor) -> Tensor:
    """Numerically stable logistic; outputs lie strictly inside (0, 1)."""
    z = _as_tensor(z)
    d = z.data
    val = np.empty_like(d)
    pos = d >= 0
    val[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    val[~pos] = ez / (1.0 + ez)
    np.clip(val, _SIG_LO, _SIG_HI, out=val)
    out = _node(val, (z,))
    if out.requires_grad:
        def _backward():
            _accum(z, out.grad * val * (1.0 - val))
        out._backward = _backward
    return out


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """2-D cross-correlation with zero 'same' padding and odd square kernels.

    x: [C,H,W] or [B,C,H,W]; kernels: [Cout,Cin,k,k]; bias: [Cout].
    """
    x, kernels, bias = _as_tensor(x), _as_tensor(kernels), _as_tensor(bias)
    K = kernels.data
    if K.ndim != 4:
        raise ValueError(f"kernels must be 4-D [Cout,Cin,kh,kw], got ndim {K.ndim}")
    cout, cin, kh, kw = K.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"kernels must be odd and square, got {kh}x{kw}")
    if bias.data.shape != (cout,):
        raise ValueError(
            f"bias shape {bias.data.shape} does not match {cout} output channels"
        )
    xd, squeeze = _batched(x.data)
    if xd.shape[1] != cin:
        raise ValueError(
            f"input channel axis: got {xd.shape[1]} channels, kernels expect {cin}"
        )
    b_, _, h, w = xd.shape
    p = kh // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # [B,C,H,W,kh,kw]
    val = np.tensordot(win, K, axes=([1, 4, 5], [1, 2, 3]))  # [B,H,W,Cout]
    val = np.ascontiguousarray(val.transpose(0, 3, 1, 2))
    val += bias.data[None, :, None, None]
    out = _node(val[0] if squeeze else val, (x, kernels, bias))
    if out.requires_grad:
        def _backward():
            g = out.grad[None] if squeeze else out.grad  # [B,Cout,H,W]
            if bias.requires_grad:
                _accum(bias, g.sum(axis=(0, 2, 3)))
            if kernels.requires_grad:
                dk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
                _accum(kernels, dk)
            if x.requires_grad:
                # Gradient w.r.t. the input is a 'same' correlation of the
                # upstream gradient with spatially flipped kernels.
                gp = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p)))
                gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))
                kf = K[:, :, ::-1, ::-1]
                dx = np.tensordot(gwin, kf, axes=([1, 4, 5], [0, 2, 3]))
                dx = dx.transpose(0, 3, 1, 2)
                _accum(x, dx[0] if squeeze else dx)
        out._backward = _backward
    return out


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the first entry in row-major order."""
    x = _as_tensor(x)
    xd, squeeze = _batched(x.data)
    b_, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial extents, got {h}x{w}")
    v = xd.reshape(b_, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    v = v.reshape(b_, c, h // 2, w // 2, 4)
    idx = v.argmax(axis=-1)  # argmax returns the first maximum
    val = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    out = _node(val[0] if squeeze else val, (x,))
    if out.requires_grad:
        def _backward():
            g = out.grad[None] if squeeze else out.grad
            gv = np.zeros((b_, c, h // 2, w // 2, 4))
            np.put_along_axis(gv, idx[..., None], g[..., None], axis=-1)
            dx = gv.reshape(b_, c, h // 2, w // 2, 2, 2)
            dx = dx.transpose(0, 1, 2, 4, 3, 5).reshape(b_, c, h, w)
            _accum(x, dx[0] if squeeze else dx)
        out._backward = _backward
    return out


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour upsampling by 2 along both spatial axes."""
    x = _as_tensor(x)
    xd, squeeze = _batched(x.data)
    b_, c, h, w = xd.shape
    val = xd.repeat(2, axis=2).repeat(2, axis=3)
    out = _node(val[0] if squeeze else val, (x,))
    if out.requires_grad:
        def _backward():
            g = out.grad[None] if squeeze else out.grad
            dx = g.reshape(b_, c, h, 2, w, 2).sum(axis=(3, 5))
            _accum(x, dx[0] if squeeze else dx)
        out._backward = _backward
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis; spatial extents must agree."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != b.data.ndim:
        raise ValueError(
            f"concat rank mismatch: ndim {a.data.ndim} vs {b.data.ndim}"
        )
    if a.data.shape[-2:] != b.data.shape[-2:]:
        raise ValueError(
            f"concat spatial mismatch: {a.data.shape[-2:]} vs {b.data.shape[-2:]}"
        )
    ca = a.data.shape[-3]
    out = _node(np.concatenate([a.data, b.data], axis=-3), (a, b))
    if out.requires_grad:
        def _backward():
            ga, gb = np.split(out.grad, [ca], axis=-3)
            if a.requires_grad:
                _accum(a, ga)
            if b.requires_grad:
                _accum(b, gb)
        out._backward = _backward
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None,
            training: bool = True) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate); identity at inference."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        out = _node(x.data.copy(), (x,))
        if out.requires_grad:
            def _backward():
                _accum(x, out.grad)
            out._backward = _backward
        return out
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = rng.random(x.data.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    out = _node(x.data * keep * scale, (x,))
    if out.requires_grad:
        def _backward():
            _accum(x, out.grad * keep * scale)
        out._backward = _backward
    return out
