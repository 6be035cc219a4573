"""Loss values, conventions, and analytic gradients against finite differences."""

import numpy as np
import pytest

from conftest import max_rel_err, numeric_grad
from cropseg.autodiff import Tensor
from cropseg.losses import (ConfusionCounts, LossSpec, bce_loss, dsc,
                            segmentation_loss, soft_confusion, tversky_index,
                            tversky_loss)


class TestDsc:
    def test_known_counts(self):
        c = ConfusionCounts(tp=6, fp=2, fn=2)
        assert dsc(c) == pytest.approx(12.0 / 16.0)

    def test_empty_vs_empty_is_one(self):
        assert dsc(ConfusionCounts(tp=0, fp=0, fn=0, tn=10)) == 1.0

    def test_no_overlap_is_zero(self):
        assert dsc(ConfusionCounts(tp=0, fp=3, fn=4)) == 0.0


class TestTverskyIndex:
    def test_beta_half_equals_dsc_exactly(self, rng):
        # Bitwise identity: both denominators associate the same way and the
        # factor-two rescale is exact in binary floating point.
        for _ in range(1000):
            c = ConfusionCounts(*rng.random(3) * rng.integers(1, 10_000))
            assert tversky_index(c, 0.5) == dsc(c)

    def test_beta_one_ignores_fn(self):
        c = ConfusionCounts(tp=4, fp=1, fn=100)
        assert tversky_index(c, 1.0) == pytest.approx(4.0 / 5.0)

    def test_beta_zero_ignores_fp(self):
        c = ConfusionCounts(tp=4, fp=100, fn=1)
        assert tversky_index(c, 0.0) == pytest.approx(4.0 / 5.0)

    def test_degenerate_denominator(self):
        assert tversky_index(ConfusionCounts(0, 0, 0), 0.5) == 1.0
        # beta=0 makes fp invisible to the denominator but not to the verdict.
        assert tversky_index(ConfusionCounts(0, 5, 0), 0.0) == 0.0

    def test_beta_out_of_range(self):
        with pytest.raises(ValueError, match="beta"):
            tversky_index(ConfusionCounts(1, 1, 1), 1.5)


class TestSoftConfusion:
    def test_hand_case(self):
        p = np.array([0.8, 0.3, 0.6, 0.1])
        y = np.array([1.0, 0.0, 1.0, 0.0])
        c = soft_confusion(p, y)
        assert c.tp == pytest.approx(1.4)
        assert c.fp == pytest.approx(0.4)
        assert c.fn == pytest.approx(0.6)
        assert c.tn == pytest.approx(1.6)

    def test_counts_partition_pixels(self, rng):
        p = rng.random(50)
        y = (rng.random(50) < 0.3).astype(float)
        c = soft_confusion(p, y)
        assert c.tp + c.fp + c.fn + c.tn == pytest.approx(50.0)

    def test_rejects_non_binary_target(self, rng):
        with pytest.raises(ValueError, match="binary"):
            soft_confusion(rng.random(4), np.array([0.0, 0.5, 1.0, 1.0]))


class TestBce:
    def test_uniform_half_gives_log2(self):
        pred = Tensor(np.full(10, 0.5))
        y = np.array([1.0] * 5 + [0.0] * 5)
        assert float(bce_loss(pred, y).data) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_perfect_prediction_pays_only_clamp(self):
        y = np.array([1.0, 0.0, 1.0, 0.0])
        loss = float(bce_loss(Tensor(y.copy()), y).data)
        assert 0.0 < loss <= 2e-7

    def test_confident_wrong_is_clamped_finite(self):
        y = np.array([1.0, 0.0])
        loss = float(bce_loss(Tensor(np.array([0.0, 1.0])), y).data)
        assert np.isfinite(loss)
        assert loss == pytest.approx(-np.log(1e-7), rel=1e-6)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="shape"):
            bce_loss(Tensor(rng.random(3)), np.zeros(4))

    def test_gradient_matches_finite_differences(self, rng):
        pred = Tensor(rng.uniform(0.05, 0.95, (2, 3, 3)), requires_grad=True)
        y = (rng.random((2, 3, 3)) < 0.4).astype(float)
        loss = bce_loss(pred, y)
        loss.backward()
        numeric = numeric_grad(lambda: float(bce_loss(pred, y).data), pred.data)
        assert max_rel_err(pred.grad, numeric) < 1e-4

    def test_gradient_zero_in_clamped_region(self):
        pred = Tensor(np.array([0.5, 1e-9]), requires_grad=True)
        bce_loss(pred, np.array([1.0, 0.0])).backward()
        assert pred.grad[1] == 0.0
        assert pred.grad[0] != 0.0


class TestTverskyLoss:
    def test_hand_value(self):
        pred = Tensor(np.array([0.8, 0.3]))
        y = np.array([1.0, 0.0])
        # tp=0.8 fp=0.3 fn=0.2: 1 - (0.8+1e-6)/(0.8+0.15+0.1+1e-6)
        want = 1.0 - (0.8 + 1e-6) / (1.05 + 1e-6)
        assert float(tversky_loss(pred, y).data) == pytest.approx(want, rel=1e-12)

    def test_perfect_prediction_is_near_zero(self):
        y = np.array([1.0, 0.0, 1.0])
        loss = float(tversky_loss(Tensor(y.copy()), y).data)
        assert 0.0 <= loss < 1e-6

    def test_loss_bounded_in_unit_interval(self, rng):
        for _ in range(50):
            pred = Tensor(rng.random(20))
            y = (rng.random(20) < 0.5).astype(float)
            val = float(tversky_loss(pred, y, beta=rng.random()).data)
            assert 0.0 <= val <= 1.0

    def test_gradient_matches_finite_differences(self, rng):
        for beta in (0.5, 0.7):
            pred = Tensor(rng.uniform(0.05, 0.95, (2, 4, 4)), requires_grad=True)
            y = (rng.random((2, 4, 4)) < 0.3).astype(float)
            tversky_loss(pred, y, beta=beta).backward()
            numeric = numeric_grad(
                lambda: float(tversky_loss(pred, y, beta=beta).data), pred.data)
            assert max_rel_err(pred.grad, numeric) < 1e-4

    def test_beta_trades_fp_for_fn_pressure(self):
        pred = Tensor(np.array([0.9, 0.4]))
        y = np.array([1.0, 0.0])
        # fp mass (0.4) outweighs fn mass (0.1), so a high beta hurts more.
        high = float(tversky_loss(pred, y, beta=0.9).data)
        low = float(tversky_loss(pred, y, beta=0.1).data)
        assert high > low

    def test_parameter_validation(self, rng):
        pred, y = Tensor(rng.random(4)), np.zeros(4)
        with pytest.raises(ValueError, match="beta"):
            tversky_loss(pred, y, beta=2.0)
        with pytest.raises(ValueError, match="epsilon"):
            tversky_loss(pred, y, epsilon=0.0)


class TestLossSpec:
    def test_dispatch(self, rng):
        pred = Tensor(rng.uniform(0.1, 0.9, 6))
        y = (rng.random(6) < 0.5).astype(float)
        b = segmentation_loss(pred, y, LossSpec("bce"))
        t = segmentation_loss(pred, y, LossSpec("tversky", beta=0.6))
        assert float(b.data) == pytest.approx(float(bce_loss(pred, y).data))
        assert float(t.data) == pytest.approx(
            float(tversky_loss(pred, y, beta=0.6).data))

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            LossSpec("dice")

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError, match="beta"):
            LossSpec("tversky", beta=-0.1)
        with pytest.raises(ValueError, match="epsilon"):
            LossSpec("tversky", epsilon=-1e-6)
