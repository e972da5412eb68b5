"""Loss values and analytic gradients against finite differences."""

import math

import numpy as np
import pytest

from sensmix.core import ClassSpace, SoftLabel
from sensmix.losses import (
    FeatureStack,
    LossWeights,
    kd_terms,
    loss_ds,
    loss_kd,
    loss_qc,
    loss_quality,
    loss_score,
)


def central_fd(fn, x, step=1e-6):
    """Gradient of a scalar function by central differences."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * step)
    return g


def max_rel_err(a, b):
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)))


def random_stack(rng, source="student", offset=0.0):
    # stage shapes mirror the toy encoder on a 16px input
    return FeatureStack(
        f2=rng.normal(size=(4, 8, 8)) + offset,
        f3=rng.normal(size=(6, 4, 4)) + offset,
        f4=rng.normal(size=(8, 2, 2)) + offset,
        source=source,
    )


class TestLossDs:
    def test_zero_at_equal(self):
        g = np.array([[0.1, 0.2], [0.3, 0.4]])
        val, grad = loss_ds(g, g)
        assert val == 0.0
        assert np.all(grad == 0.0)

    def test_constant_residual(self):
        gt = np.zeros((3, 3))
        val, _ = loss_ds(gt + 0.1, gt)
        assert val == pytest.approx(0.01, abs=1e-15)

    def test_gradient_formula(self):
        rng = np.random.default_rng(0)
        pred, gt = rng.random((4, 4)), rng.random((4, 4))
        _, grad = loss_ds(pred, gt)
        assert np.array_equal(grad, 2.0 * (pred - gt) / 16)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            pred, gt = rng.random((3, 5)), rng.random((3, 5))
            _, grad = loss_ds(pred, gt)
            fd = central_fd(lambda x: loss_ds(x, gt)[0], pred.copy())
            assert max_rel_err(grad, fd) < 1e-5

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            loss_ds(np.zeros((2, 2)), np.zeros((2, 3)))


class TestLossQc:
    def test_uniform_logits_give_log_c(self):
        for c in (4, 41):
            target = np.full(c, 1.0 / c)
            val, _ = loss_qc(np.zeros(c), target)
            assert val == pytest.approx(math.log(c), abs=1e-9)

    def test_peaked_logits_drive_loss_to_zero(self):
        c = 6
        logits = np.zeros(c)
        logits[2] = 50.0
        target = np.zeros(c)
        target[2] = 1.0
        val, _ = loss_qc(logits, target)
        assert 0.0 <= val < 1e-9

    def test_gradient_is_softmax_minus_target(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=9)
        target = rng.random(9)
        target /= target.sum()
        _, grad = loss_qc(logits, target)
        sm = np.exp(logits - logits.max())
        sm /= sm.sum()
        assert grad == pytest.approx(sm - target, abs=1e-12)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            logits = rng.normal(size=7)
            target = rng.random(7)
            target /= target.sum()
            _, grad = loss_qc(logits, target)
            fd = central_fd(lambda x: loss_qc(x, target)[0], logits.copy())
            assert max_rel_err(grad, fd) < 1e-5

    def test_accepts_soft_label(self):
        cs = ClassSpace(("a", "b"), 1)
        lab = SoftLabel(np.array([0.2, 0.5, 0.3]), cs)
        v1, g1 = loss_qc(np.array([0.1, -0.4, 0.2]), lab)
        v2, g2 = loss_qc(np.array([0.1, -0.4, 0.2]), lab.probs)
        assert v1 == v2
        assert np.array_equal(g1, g2)

    def test_extreme_logits_stay_finite(self):
        val, grad = loss_qc(np.array([1e4, 0.0, -1e4]), np.array([0.0, 1.0, 0.0]))
        assert np.isfinite(val) and np.all(np.isfinite(grad))

    def test_non_finite_logits_rejected(self):
        with pytest.raises(ValueError):
            loss_qc(np.array([np.inf, 0.0]), np.array([0.5, 0.5]))


class TestKd:
    def test_identical_stacks(self):
        rng = np.random.default_rng(4)
        s = random_stack(rng)
        t = FeatureStack(s.f2, s.f3, s.f4, source="teacher")
        fr, cd = kd_terms(s, t)
        assert fr == 0.0
        assert cd == pytest.approx(1.0, abs=1e-12)
        total, _ = loss_kd(s, t)
        assert total == pytest.approx(-1.0, abs=1e-12)  # lambda2 default

    def test_orthogonal_pooled_with_equal_early_stages(self):
        f2 = np.zeros((2, 4, 4)) + 0.3
        f3 = np.zeros((2, 2, 2)) + 0.7
        s4 = np.zeros((2, 2, 2))
        s4[0] = 1.0
        t4 = np.zeros((2, 2, 2))
        t4[1] = 1.0
        total, _ = loss_kd(FeatureStack(f2, f3, s4), FeatureStack(f2, f3, t4, source="teacher"))
        assert total == pytest.approx(0.0, abs=1e-12)

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(5)
        w = LossWeights(lambda1=0.1, lambda2=1.0)
        for _ in range(10):
            s, t = random_stack(rng), random_stack(rng, "teacher")
            total, _ = loss_kd(s, t, w)
            fr = np.abs(s.f2 - t.f2).mean() + np.abs(s.f3 - t.f3).mean()
            a = s.f4.mean(axis=(1, 2))
            b = t.f4.mean(axis=(1, 2))
            sim = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
            assert total == pytest.approx(w.lambda1 * fr - w.lambda2 * sim, abs=1e-9)

    def test_literal_distance_variant(self):
        rng = np.random.default_rng(6)
        s, t = random_stack(rng), random_stack(rng, "teacher")
        w = LossWeights(lambda1=0.25, lambda2=0.5)
        fr, sim = kd_terms(s, t)
        default, _ = loss_kd(s, t, w)
        literal, _ = loss_kd(s, t, w, literal_distance=True)
        assert default == pytest.approx(w.lambda1 * fr - w.lambda2 * sim, abs=1e-12)
        assert literal == pytest.approx(w.lambda1 * fr - w.lambda2 * (1.0 - sim), abs=1e-12)

    def test_gradients_match_fd_away_from_kinks(self):
        rng = np.random.default_rng(7)
        w = LossWeights()
        for _ in range(3):
            t = random_stack(rng, "teacher")
            # keep |student - teacher| >= 1e-3 so no MAE kink is crossed
            sgn2 = np.where(rng.random(t.f2.shape) < 0.5, -1.0, 1.0)
            sgn3 = np.where(rng.random(t.f3.shape) < 0.5, -1.0, 1.0)
            s = FeatureStack(
                t.f2 + sgn2 * rng.uniform(1e-3, 0.5, t.f2.shape),
                t.f3 + sgn3 * rng.uniform(1e-3, 0.5, t.f3.shape),
                rng.normal(size=t.f4.shape) + 0.1,
            )
            _, (g2, g3, g4) = loss_kd(s, t, w)

            def total_for(f2=None, f3=None, f4=None):
                stack = FeatureStack(
                    s.f2 if f2 is None else f2,
                    s.f3 if f3 is None else f3,
                    s.f4 if f4 is None else f4,
                )
                return loss_kd(stack, t, w)[0]

            assert max_rel_err(g2, central_fd(lambda x: total_for(f2=x), s.f2.copy())) < 1e-4
            assert max_rel_err(g3, central_fd(lambda x: total_for(f3=x), s.f3.copy())) < 1e-4
            assert max_rel_err(g4, central_fd(lambda x: total_for(f4=x), s.f4.copy())) < 1e-4

    def test_zero_norm_pooled_features_rejected(self):
        rng = np.random.default_rng(8)
        s = random_stack(rng)
        t = FeatureStack(s.f2, s.f3, np.zeros_like(s.f4), source="teacher")
        with pytest.raises(ValueError):
            loss_kd(s, t)

    def test_stage_shape_mismatch_rejected(self):
        rng = np.random.default_rng(9)
        s = random_stack(rng)
        t = FeatureStack(s.f2[:, :4, :4], s.f3, s.f4, source="teacher")
        with pytest.raises(ValueError):
            kd_terms(s, t)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda1=-0.1)


class TestLossQuality:
    def setup_method(self):
        rng = np.random.default_rng(10)
        self.s = random_stack(rng)
        self.t = random_stack(rng, "teacher")
        self.logits = rng.normal(size=5)
        self.target = np.array([0.1, 0.2, 0.3, 0.2, 0.2])

    def test_non_reference_is_pure_classification(self):
        got = loss_quality(self.logits, self.target, self.s, self.t, is_reference=False)
        assert got == loss_qc(self.logits, self.target)[0]

    def test_teacher_ignored_on_non_reference_rows(self):
        rng = np.random.default_rng(11)
        other_t = random_stack(rng, "teacher")
        a = loss_quality(self.logits, self.target, self.s, self.t, is_reference=False)
        b = loss_quality(self.logits, self.target, self.s, other_t, is_reference=False)
        c = loss_quality(self.logits, self.target, None, None, is_reference=False)
        assert a == b == c

    def test_reference_row_adds_distillation(self):
        w = LossWeights()
        got = loss_quality(self.logits, self.target, self.s, self.t, is_reference=True, w=w)
        expect = loss_qc(self.logits, self.target)[0] + loss_kd(self.s, self.t, w)[0]
        assert got == pytest.approx(expect, abs=1e-12)

    def test_self_distillation_subtracts_lambda2(self):
        t_same = FeatureStack(self.s.f2, self.s.f3, self.s.f4, source="teacher")
        got = loss_quality(self.logits, self.target, self.s, t_same, is_reference=True)
        assert got == pytest.approx(loss_qc(self.logits, self.target)[0] - 1.0, abs=1e-12)

    def test_reference_row_requires_features(self):
        with pytest.raises(ValueError):
            loss_quality(self.logits, self.target, None, None, is_reference=True)


class TestLossScore:
    def test_branch_values_exact(self):
        assert loss_score(np.array([0.5]), np.array([0.0]))[0] == 0.125
        assert loss_score(np.array([1.0]), np.array([0.0]))[0] == 0.5
        assert loss_score(np.array([2.0]), np.array([0.0]))[0] == 1.5

    def test_branches_meet_at_one(self):
        d = 1.0
        assert 0.5 * d * d == d - 0.5 == 0.5

    def test_symmetry_in_sign(self):
        v_pos, g_pos = loss_score(np.array([0.7]), np.array([0.0]))
        v_neg, g_neg = loss_score(np.array([-0.7]), np.array([0.0]))
        assert v_pos == v_neg
        assert g_pos[0] == -g_neg[0]

    def test_gradient_matches_fd_off_the_kink(self):
        rng = np.random.default_rng(12)
        for _ in range(5):
            gt = rng.normal(size=6)
            d = rng.uniform(0.05, 0.9, size=6) * np.where(rng.random(6) < 0.5, -1, 1)
            d[rng.random(6) < 0.3] *= 2.5  # push some into the linear branch
            pred = gt + d
            _, grad = loss_score(pred, gt)
            fd = central_fd(lambda x: loss_score(x, gt)[0], pred.copy())
            assert max_rel_err(grad, fd) < 1e-4

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            loss_score(np.array([]), np.array([]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            loss_score(np.zeros(3), np.zeros(4))
