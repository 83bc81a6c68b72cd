"""The five loss terms, their gradients, and the ramp schedule."""
import math

import numpy as np
import pytest

from conftest import grad_check_scalar
from semicount.errors import ConfigurationError, InputError
from semicount.losses import (
    LossWeights,
    consistency_density_grad,
    consistency_density_loss,
    consistency_seg_grad,
    consistency_seg_loss,
    inherent_consistency_grad,
    inherent_consistency_loss,
    ramp_lambda,
    supervised_density_grad,
    supervised_density_loss,
    supervised_seg_grad,
    supervised_seg_loss,
    total_loss,
)


class TestSupervisedDensity:
    def test_perfect_prediction(self, rng):
        target = rng.random((2, 4, 4))
        assert supervised_density_loss(target, target) == 0.0

    def test_constant_offset_squares(self, rng):
        target = rng.random((2, 4, 4))
        assert supervised_density_loss(target + 0.3, target) == pytest.approx(0.09, rel=1e-9)

    def test_matches_scalar_loop(self, rng):
        pred, target = rng.random((2, 3, 3)), rng.random((2, 3, 3))
        total = 0.0
        for p, t in zip(pred.ravel(), target.ravel()):
            total += (p - t) ** 2
        assert supervised_density_loss(pred, target) == pytest.approx(total / pred.size, rel=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(InputError):
            supervised_density_loss(rng.random((2, 3, 3)), rng.random((2, 4, 4)))

    def test_gradient(self, rng):
        pred, target = rng.random((1, 3, 4)), rng.random((1, 3, 4))
        _, grad = supervised_density_grad(pred, target)
        worst = grad_check_scalar(lambda a: supervised_density_loss(a, target), pred, grad)
        assert worst < 1e-3


class TestSupervisedSeg:
    def test_confident_correct_is_zero(self):
        mask = np.array([[[1.0, 0.0], [0.0, 1.0]]])[..., 0]
        score = np.stack([1.0 - mask, mask], axis=-1)
        assert supervised_seg_loss(score, mask) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_scores_give_ln2(self, rng):
        mask = (rng.random((2, 3, 3)) < 0.5).astype(float)
        score = np.full(mask.shape + (2,), 0.5)
        assert supervised_seg_loss(score, mask) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_matches_scalar_loop(self, simplex_scores, rng):
        mask = (rng.random(simplex_scores.shape[:-1]) < 0.5).astype(float)
        total = 0.0
        for score, m in zip(simplex_scores.reshape(-1, 2), mask.ravel()):
            total += -math.log(score[1] if m else score[0])
        expected = total / mask.size
        assert supervised_seg_loss(simplex_scores, mask) == pytest.approx(expected, rel=1e-9)

    def test_gradient(self, simplex_scores, rng):
        mask = (rng.random(simplex_scores.shape[:-1]) < 0.5).astype(float)
        _, grad = supervised_seg_grad(simplex_scores, mask)
        worst = grad_check_scalar(
            lambda s: supervised_seg_loss(s, mask), simplex_scores, grad
        )
        assert worst < 1e-3


class TestInherentConsistency:
    def test_identical_maps(self, rng):
        m = rng.random((2, 3, 3))
        assert inherent_consistency_loss(m, m) == 0.0

    def test_opposite_constants(self):
        assert inherent_consistency_loss(np.ones((2, 4, 4)), np.zeros((2, 4, 4))) == 1.0

    def test_matches_scalar_loop(self, rng):
        a, b = rng.random((2, 3, 3)), rng.random((2, 3, 3))
        expected = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
        assert inherent_consistency_loss(a, b) == pytest.approx(expected, rel=1e-12)

    def test_gradients_flow_into_both_sides(self, rng):
        a, b = rng.random((1, 3, 3)), rng.random((1, 3, 3))
        _, grad_a, grad_b = inherent_consistency_grad(a, b)
        assert grad_check_scalar(lambda x: inherent_consistency_loss(x, b), a, grad_a) < 1e-3
        assert grad_check_scalar(lambda x: inherent_consistency_loss(a, x), b, grad_b) < 1e-3
        np.testing.assert_allclose(grad_a, -grad_b, atol=1e-15)


class TestConsistencySeg:
    def test_all_uncertain_contributes_nothing(self, simplex_scores, rng):
        other = simplex_scores[..., ::-1]
        keep = np.zeros(simplex_scores.shape[:-1])
        value, grad = consistency_seg_grad(simplex_scores, other, keep)
        assert value == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(simplex_scores))

    def test_agreement_is_zero(self, simplex_scores):
        keep = np.ones(simplex_scores.shape[:-1])
        assert consistency_seg_loss(simplex_scores, simplex_scores, keep) == 0.0

    def test_half_masked_matches_kept_pixel_oracle(self, simplex_scores, rng):
        teacher = np.roll(simplex_scores, 1, axis=1)
        keep = (rng.random(simplex_scores.shape[:-1]) < 0.5).astype(float)
        value = consistency_seg_loss(simplex_scores, teacher, keep)
        total, kept = 0.0, 0
        for ps, pt, k in zip(
            simplex_scores.reshape(-1, 2), teacher.reshape(-1, 2), keep.ravel()
        ):
            if k:
                kept += 1
                total += ((ps - pt) ** 2).sum()
        assert value == pytest.approx(total / max(kept, 1), rel=1e-12)

    def test_gradient(self, simplex_scores, rng):
        teacher = np.roll(simplex_scores, 1, axis=2)
        keep = (rng.random(simplex_scores.shape[:-1]) < 0.7).astype(float)
        _, grad = consistency_seg_grad(simplex_scores, teacher, keep)
        worst = grad_check_scalar(
            lambda s: consistency_seg_loss(s, teacher, keep), simplex_scores, grad
        )
        assert worst < 1e-3


class TestConsistencyDensity:
    def test_uniform_weights_reduce_to_mse(self, rng):
        student, teacher = rng.random((2, 4, 4)), rng.random((2, 4, 4))
        weights = np.full(student.shape, 7.0)
        value = consistency_density_loss(student, teacher, weights)
        assert value == pytest.approx(np.mean((student - teacher) ** 2), rel=1e-9)

    def test_agreement_is_zero(self, rng):
        m = rng.random((2, 4, 4))
        assert consistency_density_loss(m, m, np.ones_like(m)) == 0.0

    def test_matches_weighted_accumulation(self, rng):
        student, teacher = rng.random((2, 3, 3)), rng.random((2, 3, 3))
        weights = rng.random(student.shape) * 7.0
        num, mass = 0.0, 0.0
        for s, t, w in zip(student.ravel(), teacher.ravel(), weights.ravel()):
            num += w * (s - t) ** 2
            mass += w
        assert consistency_density_loss(student, teacher, weights) == pytest.approx(
            num / mass, rel=1e-12
        )

    def test_weight_scale_invariance(self, rng):
        student, teacher = rng.random((2, 4, 4)), rng.random((2, 4, 4))
        weights = rng.random(student.shape) + 0.1
        a = consistency_density_loss(student, teacher, weights)
        b = consistency_density_loss(student, teacher, 2.0 * weights)
        assert a == pytest.approx(b, rel=1e-12)

    def test_all_zero_weights_guarded(self, rng):
        student, teacher = rng.random((1, 3, 3)), rng.random((1, 3, 3))
        value = consistency_density_loss(student, teacher, np.zeros_like(student))
        assert value == 0.0 or np.isfinite(value)

    def test_gradient(self, rng):
        student, teacher = rng.random((1, 4, 4)), rng.random((1, 4, 4))
        weights = rng.random(student.shape) * 3.0
        _, grad = consistency_density_grad(student, teacher, weights)
        worst = grad_check_scalar(
            lambda s: consistency_density_loss(s, teacher, weights), student, grad
        )
        assert worst < 1e-3


class TestRamp:
    def test_start_is_exp_minus_five(self):
        weights = LossWeights(ramp_max=3.0, ramp_steps=200)
        assert abs(ramp_lambda(0, weights) - 3.0 * math.exp(-5.0)) <= 1e-12 * 3.0

    def test_saturates_at_max(self):
        weights = LossWeights(ramp_max=3.0, ramp_steps=200)
        assert abs(ramp_lambda(200, weights) - 3.0) <= 1e-12
        assert abs(ramp_lambda(10**6, weights) - 3.0) <= 1e-12

    def test_midpoint_value(self):
        weights = LossWeights(ramp_max=1.0, ramp_steps=100)
        assert ramp_lambda(50, weights) == pytest.approx(math.exp(-1.25), rel=1e-12)

    def test_non_decreasing_and_continuous(self):
        weights = LossWeights(ramp_max=1.0, ramp_steps=137)
        values = np.array([ramp_lambda(t, weights) for t in range(0, 300)])
        assert np.all(np.diff(values) >= 0)
        assert np.abs(np.diff(values)).max() < 0.05

    def test_nonpositive_ramp_rejected(self):
        with pytest.raises(ConfigurationError):
            LossWeights(ramp_steps=0)


class TestTotalLoss:
    def test_zero_ramp_drops_unsupervised_branch(self):
        parts = {"sup_density": 0.4, "sup_seg": 0.2, "inherent": 0.1,
                 "cons_seg": 9.0, "cons_density": 9.0}
        weights = LossWeights(seg_tradeoff=0.1, ramp_max=1.0, ramp_steps=10)
        total, report = total_loss(parts, weights, ramp_value=0.0)
        assert total == pytest.approx(0.4 + 0.1 * 0.2 + 0.1, rel=1e-12)
        assert report.cons_seg == 9.0  # reported even when weighted away

    def test_all_zero_parts(self):
        weights = LossWeights()
        total, _ = total_loss({}, weights, 0.5)
        assert total == 0.0

    def test_matches_hand_combined_scalar(self, rng):
        parts = {name: float(v) for name, v in zip(
            ("sup_density", "sup_seg", "inherent", "cons_seg", "cons_density"),
            rng.random(5),
        )}
        alpha, lam = 0.1, 1.0
        weights = LossWeights(seg_tradeoff=alpha, ramp_max=1.0, ramp_steps=5)
        total, report = total_loss(parts, weights, lam)
        expected = (
            parts["sup_density"]
            + alpha * parts["sup_seg"]
            + parts["inherent"]
            + lam * (alpha * parts["cons_seg"] + parts["cons_density"])
        )
        assert total == pytest.approx(expected, abs=1e-9)
        assert report.total == total
