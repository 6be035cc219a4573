"""Shared helpers: finite-difference gradients and tolerance math."""

import numpy as np
import pytest


def numeric_grad(fn, target: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar fn() w.r.t. every entry of target.

    fn must re-run the forward pass reading target's current contents.
    """
    g = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = target[idx]
        target[idx] = orig + h
        fp = fn()
        target[idx] = orig - h
        fm = fn()
        target[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
