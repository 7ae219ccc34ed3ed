"""Loss primitives, their gradients, and the loss compositions."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pseudolabel3d.losses import (
    LossBreakdown,
    LossWeights,
    binary_entropy,
    cls_loss,
    combined_total,
    iou_est_loss,
    reg_loss,
    supervised_total,
    unsupervised_total,
)

H = 1e-5
parts = st.floats(0, 100, allow_nan=False)


def central_difference(fn, x, h=H):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def rel_error(analytic, numeric):
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-300)


def fd_cls(rng):
    n = int(rng.integers(1, 30))
    x = rng.uniform(-5, 5, n)
    y = (rng.random(n) < 0.4).astype(float)
    gamma, alpha = rng.choice([0.0, 1.0, 2.0, 2.5]), rng.uniform(0.1, 0.9)
    _, g = cls_loss(x, y, gamma, alpha)
    return rel_error(g, central_difference(lambda v: cls_loss(v, y, gamma, alpha)[0], x))


def fd_reg(rng):
    shape = (int(rng.integers(1, 10)), 7)
    beta = rng.uniform(0.2, 2.0)
    t = rng.normal(size=shape)
    d = rng.uniform(-3 * beta, 3 * beta, shape)
    # keep clear of the kinks at |d| = beta and d = 0 so the difference quotient is valid
    d = np.where(np.abs(np.abs(d) - beta) < 1e-3, d + 2e-3, d)
    d = np.where(np.abs(d) < 1e-3, 1e-2, d)
    p = t + d
    _, g = reg_loss(p, t, beta)
    return rel_error(g, central_difference(lambda v: reg_loss(v, t, beta)[0], p))


def fd_iou(rng):
    n = int(rng.integers(1, 30))
    p = rng.uniform(0.05, 0.95, n)
    t = rng.random(n)
    _, g = iou_est_loss(p, t)
    return rel_error(g, central_difference(lambda v: iou_est_loss(v, t)[0], p))


class TestClsLoss:
    def test_saturated_correct_prediction(self):
        value, _ = cls_loss([20.0], [1.0])
        assert value < 1e-6

    def test_plain_bce_at_half(self):
        value, _ = cls_loss([0.0], [1.0], gamma=0.0, alpha=0.5)
        assert value == pytest.approx(0.5 * math.log(2), abs=1e-15)

    def test_empty(self):
        value, grad = cls_loss([], [])
        assert value == 0.0 and grad.shape == (0,)

    def test_non_binary_targets_rejected(self):
        with pytest.raises(ValueError):
            cls_loss([0.0], [0.5])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cls_loss([0.0, 1.0], [1.0])

    def test_extreme_logits_stay_finite(self):
        value, grad = cls_loss([-800.0, 800.0], [1.0, 0.0])
        assert math.isfinite(value) and np.all(np.isfinite(grad))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        assert max(fd_cls(rng) for _ in range(100)) < 1e-5

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=20), st.data())
    def test_non_negative(self, logits, data):
        y = data.draw(st.lists(st.sampled_from([0.0, 1.0]), min_size=len(logits), max_size=len(logits)))
        assert cls_loss(logits, y)[0] >= 0.0


class TestRegLoss:
    def test_zero_residual(self):
        value, grad = reg_loss(np.ones(7), np.ones(7))
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_quadratic_branch(self):
        assert reg_loss([0.5], [0.0], beta=1.0)[0] == 0.125

    def test_linear_branch(self):
        assert reg_loss([3.0], [0.0], beta=1.0)[0] == 2.5

    def test_bad_beta(self):
        with pytest.raises(ValueError):
            reg_loss([0.0], [0.0], beta=0.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        assert max(fd_reg(rng) for _ in range(100)) < 1e-6

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(0.1, 3))
    def test_zero_iff_equal(self, values, beta):
        p = np.array(values)
        assert reg_loss(p, p, beta)[0] == 0.0
        assert reg_loss(p + 0.1, p, beta)[0] > 0.0


class TestIoULoss:
    def test_half_half(self):
        assert iou_est_loss([0.5], [0.5])[0] == pytest.approx(math.log(2), abs=1e-15)

    def test_minimum_at_target_is_entropy(self):
        t = np.array([0.1, 0.4, 0.75, 0.9])
        value, grad = iou_est_loss(t, t)
        assert value == pytest.approx(binary_entropy(t), abs=1e-12)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)
        for eps in (1e-3, -1e-3):
            assert iou_est_loss(t + eps, t)[0] > value

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        assert max(fd_iou(rng) for _ in range(100)) < 1e-5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            iou_est_loss([0.5, 0.5], [0.5])


class TestCompositions:
    def test_supervised_examples(self):
        assert supervised_total(0, 0, 0, 0).total == 0.0
        assert supervised_total(1, 1, 1, 1).total == 4.0

    def test_unsupervised_examples(self):
        b = unsupervised_total(1, 1, 1, rcnn_iou=5.0)
        assert b.total == 3.0 and b.rcnn_iou == 0.0

    def test_combined_examples(self):
        l, u = LossBreakdown(total=2.0), LossBreakdown(total=3.0)
        assert combined_total(l, u, LossWeights(0.0)) == 2.0
        assert combined_total(l, u, LossWeights(1.0)) == 5.0

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-0.1)

    @given(parts, parts, parts, parts)
    def test_supervised_sum(self, a, b, c, d):
        assert abs(supervised_total(a, b, c, d).total - (a + b + c + d)) <= 1e-12 * max(1.0, a + b + c + d)

    @given(parts, parts, parts, st.one_of(st.none(), parts))
    def test_unsupervised_ignores_iou_input(self, a, b, c, iou):
        br = unsupervised_total(a, b, c, rcnn_iou=iou)
        assert br.total == unsupervised_total(a, b, c).total
        assert abs(br.total - (a + b + c)) <= 1e-12 * max(1.0, a + b + c)

    @given(parts, parts)
    def test_combined_is_affine_in_lambda(self, lt, ut):
        l, u = LossBreakdown(total=lt), LossBreakdown(total=ut)
        vals = [combined_total(l, u, LossWeights(lam)) for lam in (0.0, 0.5, 2.0)]
        assert abs(vals[1] - (lt + 0.5 * ut)) <= 1e-12 * max(1.0, vals[1])
        assert abs((vals[2] - vals[0]) - 2.0 * (vals[1] - vals[0]) * 2.0) <= 1e-12 * max(1.0, vals[2])
