"""
Tests for the distillation loss and its gradient.
"""

import math

import numpy as np
import pytest

from hatsim.distill import DistillationInput, distillation_loss, distillation_loss_grad


def reference_loss(f_target, f_draft, head, w_ce):
    """Plain-loop evaluation of the same loss."""
    d = len(f_target)
    sl = 0.0
    for a, b in zip(f_target, f_draft):
        x = abs(a - b)
        sl += 0.5 * x * x if x < 1 else x - 0.5
    sl /= d

    def softmax(z):
        m = max(z)
        e = [math.exp(v - m) for v in z]
        s = sum(e)
        return [v / s for v in e]

    zt = [sum(h * f for h, f in zip(row, f_target)) for row in head]
    zd = [sum(h * f for h, f in zip(row, f_draft)) for row in head]
    p, q = softmax(zt), softmax(zd)
    ce = -sum(pi * math.log(qi) for pi, qi in zip(p, q))
    return sl + w_ce * ce


class TestDistillationLoss:
    """Tests for distillation_loss."""

    def test_worked_example(self):
        inp = DistillationInput(f_target=[1.0, 0.0], f_draft=[0.0, 1.0], head=np.eye(2), w_ce=0.1)
        assert distillation_loss(inp) == pytest.approx(0.6044, abs=1e-4)

    def test_identical_features_single_class(self):
        inp = DistillationInput(f_target=[3.0], f_draft=[3.0], head=[[2.5]], w_ce=0.1)
        assert distillation_loss(inp) == 0.0

    def test_zero_weight_is_smooth_l1(self):
        inp = DistillationInput(f_target=[0.0, 2.0], f_draft=[0.5, 0.0], head=np.eye(2), w_ce=0.0)
        assert distillation_loss(inp) == pytest.approx((0.125 + 1.5) / 2)

    def test_identical_features_give_weighted_entropy(self):
        f = np.array([0.3, -1.2, 0.7])
        head = np.array([[1.0, 0.0, 2.0], [0.5, -1.0, 0.0]])
        z = head @ f
        p = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
        entropy = -(p * np.log(p)).sum()
        inp = DistillationInput(f_target=f, f_draft=f, head=head, w_ce=0.4)
        assert distillation_loss(inp) == pytest.approx(0.4 * entropy, abs=1e-12)

    def test_matches_reference_randomized(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            d, v = rng.integers(1, 9, size=2)
            f_target = rng.normal(size=d)
            f_draft = rng.normal(size=d)
            head = rng.normal(size=(v, d))
            w_ce = float(rng.uniform(0, 1))
            inp = DistillationInput(f_target, f_draft, head, w_ce)
            expected = reference_loss(f_target.tolist(), f_draft.tolist(), head.tolist(), w_ce)
            assert distillation_loss(inp) == pytest.approx(expected, abs=1e-9)
            assert distillation_loss(inp) >= 0.0

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            DistillationInput(f_target=[1.0, 2.0], f_draft=[1.0], head=np.eye(2))
        with pytest.raises(ValueError):
            DistillationInput(f_target=[1.0], f_draft=[1.0], head=[[1.0, 2.0]])
        with pytest.raises(ValueError):
            DistillationInput(f_target=[float('nan')], f_draft=[1.0], head=[[1.0]])
        with pytest.raises(ValueError):
            DistillationInput(f_target=[1.0], f_draft=[1.0], head=[[1.0]], w_ce=-0.1)


class TestDistillationGradient:
    """Finite-difference check of distillation_loss_grad."""

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        h = 1e-6
        checked = 0
        while checked < 50:
            d, v = rng.integers(1, 9, size=2)
            f_target = rng.normal(size=d)
            f_draft = f_target + rng.normal(scale=0.8, size=d)
            # the smooth-L1 kink at |x| = 1 has no derivative
            if np.any(np.abs(np.abs(f_draft - f_target) - 1.0) < 1e-3):
                continue
            inp = DistillationInput(f_target, f_draft, rng.normal(size=(v, d)), 0.1)
            analytic = distillation_loss_grad(inp)
            numeric = np.zeros(d)
            for i in range(d):
                step = np.zeros(d)
                step[i] = h
                plus = distillation_loss(DistillationInput(f_target, f_draft + step, inp.head, 0.1))
                minus = distillation_loss(DistillationInput(f_target, f_draft - step, inp.head, 0.1))
                numeric[i] = (plus - minus) / (2 * h)
            scale = max(1.0, np.abs(analytic).max())
            assert np.abs(analytic - numeric).max() / scale < 1e-5
            checked += 1
