"""Adam against a scalar reference recurrence, and the annealing
schedule's fixed points."""

import numpy as np
import pytest

from multvae.errors import NumericError, ShapeError
from multvae.optim import (AnnealSchedule, adam_step, beta_at,
                           capture_best_beta, init_adam)


def reference_adam(grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Plain-float Adam on one coordinate; returns the parameter path."""
    p, m, v = 0.0, 0.0, 0.0
    path = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        path.append(p)
    return path


class TestAdam:
    def test_first_step_with_unit_gradient(self):
        """Bias corrections cancel at t=1, so the move is -lr (up to the
        epsilon in the denominator)."""
        p = np.array([0.0, 5.0])
        state = init_adam([p], lr=1e-3)
        adam_step(state, [p], [np.ones(2)])
        np.testing.assert_allclose(p, [-1e-3, 5.0 - 1e-3], atol=1e-10)

    def test_zero_gradient_is_a_fixed_point(self):
        p = np.array([1.0, -2.0, 3.0])
        before = p.copy()
        state = init_adam([p])
        for _ in range(3):
            adam_step(state, [p], [np.zeros(3)])
        np.testing.assert_array_equal(p, before)

    def test_matches_scalar_reference_recurrence(self):
        rng = np.random.default_rng(0)
        grads = rng.normal(size=12)
        expected = reference_adam(list(grads))
        p = np.zeros(1)
        state = init_adam([p])
        got = []
        for g in grads:
            adam_step(state, [p], [np.array([g])])
            got.append(float(p[0]))
        np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_descends_a_quadratic_bowl(self):
        """Minimising 0.5 * ||p||^2: after the warm-up steps the loss
        decreases monotonically (until the iterate reaches Adam's
        step-size floor and starts to hover) and ends far below where it
        started."""
        p = np.array([3.0, -2.0])
        state = init_adam([p], lr=0.05)
        losses = []
        for _ in range(200):
            losses.append(0.5 * float(p @ p))
            adam_step(state, [p], [p.copy()])
        for k in range(5, 50):
            assert losses[k + 1] < losses[k]
        assert losses[-1] < 1e-2 * losses[0]

    def test_layout_does_not_matter(self):
        """The same coordinates split differently across arrays take the
        same trajectory."""
        rng = np.random.default_rng(4)
        start = rng.normal(size=4)
        grads = [rng.normal(size=4) for _ in range(5)]
        flat = start.copy()
        state_flat = init_adam([flat])
        pair = [start[:2].copy(), start[2:].copy()]
        state_pair = init_adam(pair)
        square = start.reshape(2, 2).copy()
        state_square = init_adam([square])
        for g in grads:
            adam_step(state_flat, [flat], [g])
            adam_step(state_pair, pair, [g[:2], g[2:]])
            adam_step(state_square, [square], [g.reshape(2, 2)])
        np.testing.assert_allclose(np.concatenate(pair), flat, rtol=1e-15)
        np.testing.assert_allclose(square.ravel(), flat, rtol=1e-15)

    def test_zero_lr_changes_nothing(self):
        p = np.array([1.0])
        state = init_adam([p], lr=0.0)
        adam_step(state, [p], [np.array([10.0])])
        assert p[0] == 1.0

    def test_rejects_non_finite_gradient(self):
        p = np.zeros(2)
        state = init_adam([p])
        with pytest.raises(NumericError):
            adam_step(state, [p], [np.array([1.0, np.inf])])

    def test_rejects_shape_mismatch(self):
        p = np.zeros(2)
        state = init_adam([p])
        with pytest.raises(ShapeError):
            adam_step(state, [p], [np.zeros(3)])


class TestAnnealSchedule:
    def test_starts_at_zero(self):
        assert beta_at(AnnealSchedule(1000, 1.0), 0) == 0.0

    def test_reaches_the_cap(self):
        sched = AnnealSchedule(1000, 1.0)
        assert beta_at(sched, 1000) == 1.0
        assert beta_at(sched, 5000) == 1.0

    def test_midpoint_with_reduced_cap(self):
        assert beta_at(AnnealSchedule(1000, 0.2), 500) == pytest.approx(0.1)

    def test_zero_total_means_constant_cap(self):
        sched = AnnealSchedule(0, 0.7)
        assert beta_at(sched, 0) == 0.7
        assert beta_at(sched, 123) == 0.7

    def test_monotone_and_bounded(self):
        sched = AnnealSchedule(300, 0.8)
        values = [beta_at(sched, t) for t in range(0, 700, 7)]
        assert all(0.0 <= v <= 0.8 for v in values)
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_rejects_negative_step(self):
        with pytest.raises(ValueError):
            beta_at(AnnealSchedule(10, 1.0), -1)

    def test_rejects_bad_cap(self):
        with pytest.raises(ValueError):
            AnnealSchedule(10, 1.5)


class TestCaptureBestBeta:
    def test_picks_beta_at_the_peak(self):
        sched = AnnealSchedule(1000, 1.0)
        history = [(100, 0.2), (200, 0.5), (300, 0.4)]
        assert capture_best_beta(sched, history) == pytest.approx(0.2)

    def test_ties_go_to_the_smallest_step(self):
        sched = AnnealSchedule(1000, 1.0)
        history = [(100, 0.5), (400, 0.5), (800, 0.3)]
        assert capture_best_beta(sched, history) == pytest.approx(0.1)

    def test_peak_past_the_ramp_returns_the_cap(self):
        sched = AnnealSchedule(100, 1.0)
        history = [(50, 0.1), (500, 0.9)]
        assert capture_best_beta(sched, history) == 1.0

    def test_rejects_empty_history(self):
        with pytest.raises(ValueError):
            capture_best_beta(AnnealSchedule(10, 1.0), [])
