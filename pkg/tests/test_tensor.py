"""The hand-written MLP: forward against explicit matmuls, backward
against central finite differences, dropout statistics."""

import numpy as np
import pytest

from multvae.errors import ShapeError
from multvae.tensor import (IDENTITY, TANH, DenseLayer, backward_mlp,
                            forward_mlp, glorot_layer, grad_check,
                            input_dropout)


def random_stack(rng, dims, activations):
    return [glorot_layer(dims[k], dims[k + 1], activations[k], rng)
            for k in range(len(dims) - 1)]


class TestForward:
    def test_identity_layer_passes_input_through(self):
        layer = DenseLayer(np.eye(3), np.zeros(3), IDENTITY)
        x = np.arange(6.0).reshape(2, 3)
        out, tape = forward_mlp([layer], x)
        np.testing.assert_array_equal(out, x)
        assert len(tape) == 1

    def test_matches_explicit_loops(self):
        """One tanh layer versus a scalar triple loop."""
        rng = np.random.default_rng(5)
        layer = glorot_layer(3, 2, TANH, rng)
        x = rng.normal(size=(4, 3))
        out, _ = forward_mlp([layer], x)
        expected = np.zeros((4, 2))
        for b in range(4):
            for j in range(2):
                acc = layer.bias[j]
                for i in range(3):
                    acc += x[b, i] * layer.weight[i, j]
                expected[b, j] = np.tanh(acc)
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)

    def test_zero_weights_tanh_gives_zeros(self):
        layer = DenseLayer(np.zeros((4, 3)), np.zeros(3), TANH)
        out, _ = forward_mlp([layer], np.ones((2, 4)))
        np.testing.assert_array_equal(out, np.zeros((2, 3)))

    def test_rejects_width_mismatch(self):
        layer = DenseLayer(np.zeros((4, 3)), np.zeros(3), TANH)
        with pytest.raises(ShapeError):
            forward_mlp([layer], np.ones((2, 5)))

    def test_rejects_bad_bias_shape(self):
        with pytest.raises(ShapeError):
            DenseLayer(np.zeros((4, 3)), np.zeros(4), TANH)


class TestBackward:
    def test_single_identity_layer_grads_by_hand(self):
        """loss = sum(out) so grad_output is all ones; the weight grad is
        x^T @ ones and the input grad is ones @ W^T."""
        rng = np.random.default_rng(2)
        layer = glorot_layer(3, 2, IDENTITY, rng)
        x = rng.normal(size=(5, 3))
        _, tape = forward_mlp([layer], x)
        ones = np.ones((5, 2))
        grads, grad_x = backward_mlp([layer], tape, ones)
        np.testing.assert_allclose(grads[0][0], x.T @ ones, atol=1e-12)
        np.testing.assert_allclose(grads[0][1], ones.sum(axis=0), atol=1e-12)
        np.testing.assert_allclose(grad_x, ones @ layer.weight.T, atol=1e-12)

    def test_zero_grad_output_gives_zero_grads(self):
        rng = np.random.default_rng(3)
        stack = random_stack(rng, [3, 4, 2], [TANH, IDENTITY])
        _, tape = forward_mlp(stack, rng.normal(size=(2, 3)))
        grads, grad_x = backward_mlp(stack, tape, np.zeros((2, 2)))
        for gw, gb in grads:
            assert not gw.any() and not gb.any()
        assert not grad_x.any()

    def test_matches_finite_differences_on_random_stacks(self):
        """100 random architectures (0-2 hidden layers, mixed
        activations): max relative error below 1e-6 at step 1e-5."""
        rng = np.random.default_rng(17)
        worst = 0.0
        for trial in range(100):
            n_layers = int(rng.integers(1, 4))
            dims = [int(rng.integers(1, 6)) for _ in range(n_layers + 1)]
            acts = [str(rng.choice([TANH, IDENTITY]))
                    for _ in range(n_layers)]
            stack = random_stack(rng, dims, acts)
            x = rng.normal(size=(int(rng.integers(1, 5)), dims[0]))
            proj = rng.normal(size=(x.shape[0], dims[-1]))

            def loss_fn():
                out, _ = forward_mlp(stack, x)
                return float((out * proj).sum())

            _, tape = forward_mlp(stack, x)
            grads, _ = backward_mlp(stack, tape, proj)
            named = []
            analytic = {}
            for k, layer in enumerate(stack):
                named += [(f"{k}.w", layer.weight), (f"{k}.b", layer.bias)]
                analytic[f"{k}.w"], analytic[f"{k}.b"] = grads[k]
            err, _ = grad_check(loss_fn, named, analytic, step=1e-5)
            worst = max(worst, err)
        assert worst < 1e-6

    def test_grad_wrt_input_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        stack = random_stack(rng, [4, 3, 2], [TANH, IDENTITY])
        x = rng.normal(size=(3, 4))
        proj = rng.normal(size=(3, 2))

        def loss_fn():
            out, _ = forward_mlp(stack, x)
            return float((out * proj).sum())

        _, tape = forward_mlp(stack, x)
        _, grad_x = backward_mlp(stack, tape, proj)
        err, _ = grad_check(loss_fn, [("x", x)], {"x": grad_x}, step=1e-5)
        assert err < 1e-6

    def test_rejects_mismatched_grad_output(self):
        rng = np.random.default_rng(1)
        stack = random_stack(rng, [3, 2], [IDENTITY])
        _, tape = forward_mlp(stack, rng.normal(size=(2, 3)))
        with pytest.raises(ShapeError):
            backward_mlp(stack, tape, np.zeros((2, 3)))


class TestGradCheck:
    def test_quadratic_loss_agrees_with_itself(self):
        rng = np.random.default_rng(11)
        p = rng.normal(size=(4, 3))
        analytic = {"p": p.copy()}  # d/dp of 0.5 * sum(p^2) is p

        def loss_fn():
            return float(0.5 * (p * p).sum())

        err, per_block = grad_check(loss_fn, [("p", p)], analytic, step=1e-5)
        assert err < 1e-9
        assert set(per_block) == {"p"}

    def test_detects_a_sign_flip(self):
        rng = np.random.default_rng(12)
        p = rng.normal(size=5) + 2.0

        def loss_fn():
            return float(0.5 * (p * p).sum())

        err, _ = grad_check(loss_fn, [("p", p)], {"p": -p.copy()}, step=1e-5)
        assert err > 1.0

    def test_restores_parameters(self):
        p = np.array([1.0, 2.0])
        before = p.copy()
        grad_check(lambda: float(p.sum()), [("p", p)],
                   {"p": np.ones(2)}, step=1e-5)
        np.testing.assert_array_equal(p, before)


class TestInputDropout:
    def test_eval_mode_is_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        np.testing.assert_array_equal(
            input_dropout(x, 0.5, seed=1, train_mode=False), x)

    def test_keep_prob_one_is_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        np.testing.assert_array_equal(
            input_dropout(x, 1.0, seed=1, train_mode=True), x)

    def test_same_seed_same_mask(self):
        x = np.ones((10, 10))
        a = input_dropout(x, 0.5, seed=42, train_mode=True)
        b = input_dropout(x, 0.5, seed=42, train_mode=True)
        np.testing.assert_array_equal(a, b)
        c = input_dropout(x, 0.5, seed=43, train_mode=True)
        assert (a != c).any()

    def test_survivors_are_scaled_by_inverse_keep_prob(self):
        x = np.full((100, 100), 3.0)
        out = input_dropout(x, 0.25, seed=7, train_mode=True)
        assert set(np.unique(out)) == {0.0, 12.0}

    def test_expectation_is_preserved(self):
        """A million ones through keep_prob 0.5: the mean must land in
        [0.99, 1.01] (that is 10 standard errors wide)."""
        x = np.ones(1_000_000).reshape(1000, 1000)
        out = input_dropout(x, 0.5, seed=123, train_mode=True)
        assert 0.99 < out.mean() < 1.01

    def test_zero_fraction_within_three_sigma(self):
        keep = 0.7
        n = 200_000
        x = np.ones((200, 1000))
        out = input_dropout(x, keep, seed=9, train_mode=True)
        zeros = (out == 0).sum()
        sigma = np.sqrt(n * keep * (1 - keep))
        assert abs(zeros - n * (1 - keep)) < 3 * sigma

    def test_rejects_bad_keep_prob(self):
        with pytest.raises(ValueError):
            input_dropout(np.ones(3), 0.0, seed=0)
        with pytest.raises(ValueError):
            input_dropout(np.ones(3), 1.5, seed=0)
