"""Encoder/decoder behaviour, the KL term, the training objective's
gradients, prediction, and the checkpoint codec."""

import numpy as np
import pytest

from multvae.errors import CorruptCheckpointError, NumericError, ShapeError
from multvae.likelihoods import LikelihoodKind, log_likelihood
from multvae.models import (LOGVAR_CLAMP, NEG_INF_SENTINEL, ModelParams,
                            ModelSpec, VariationalState, clone_params, decode,
                            encode, encoder_dims, decoder_dims, init_params,
                            kl_diag_gaussian, load_checkpoint,
                            named_param_arrays, normalize_rows,
                            objective_and_grads, param_arrays, predict_scores,
                            save_checkpoint)
from multvae.tensor import grad_check


def vae_spec(n_items=12, latent=3, hidden=(6,), keep=1.0, ll="multinomial"):
    return ModelSpec("vae", n_items, latent, hidden,
                     LikelihoodKind(ll), input_keep_prob=keep)


def dae_spec(n_items=12, latent=3, hidden=(6,), keep=1.0, ll="multinomial"):
    return ModelSpec("dae", n_items, latent, hidden,
                     LikelihoodKind(ll), input_keep_prob=keep)


def click_batch(rng, batch, n_items, p=0.3):
    x = (rng.random((batch, n_items)) < p).astype(float)
    x[np.arange(batch), rng.integers(0, n_items, batch)] = 1.0
    return x


class TestSpec:
    def test_dimension_plans(self):
        spec = vae_spec(n_items=20, latent=4, hidden=(8, 6))
        assert encoder_dims(spec) == [20, 8, 6, 8]
        assert decoder_dims(spec) == [4, 6, 8, 20]
        spec = dae_spec(n_items=20, latent=4, hidden=())
        assert encoder_dims(spec) == [20, 4]
        assert decoder_dims(spec) == [4, 20]

    def test_rejects_three_hidden_layers(self):
        with pytest.raises(ValueError):
            vae_spec(hidden=(8, 8, 8))

    def test_rejects_bad_keep_prob(self):
        with pytest.raises(ValueError):
            vae_spec(keep=0.0)


class TestNormalize:
    def test_unit_norms(self):
        rng = np.random.default_rng(0)
        x = rng.random((5, 7)) + 0.1
        norms = np.linalg.norm(normalize_rows(x), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_zero_rows_pass_through(self):
        x = np.zeros((2, 4))
        np.testing.assert_array_equal(normalize_rows(x), x)


class TestEncode:
    def test_eval_mode_returns_the_mean(self):
        spec = vae_spec()
        params = init_params(spec, seed=1)
        x = click_batch(np.random.default_rng(2), 4, spec.n_items)
        state = encode(params, spec, x, train_mode=False)
        np.testing.assert_array_equal(state.z, state.mu)
        np.testing.assert_array_equal(state.eps, np.zeros_like(state.mu))

    def test_train_mode_is_seed_deterministic(self):
        spec = vae_spec(keep=0.5)
        params = init_params(spec, seed=1)
        x = click_batch(np.random.default_rng(3), 4, spec.n_items)
        a = encode(params, spec, x, seed=11, train_mode=True)
        b = encode(params, spec, x, seed=11, train_mode=True)
        np.testing.assert_array_equal(a.eps, b.eps)
        np.testing.assert_array_equal(a.z, b.z)
        c = encode(params, spec, x, seed=12, train_mode=True)
        assert (a.eps != c.eps).any()

    def test_reparametrisation_identity(self):
        spec = vae_spec()
        params = init_params(spec, seed=4)
        x = click_batch(np.random.default_rng(5), 3, spec.n_items)
        state = encode(params, spec, x, seed=6, train_mode=True)
        np.testing.assert_allclose(
            state.z, state.mu + state.eps * np.exp(0.5 * state.logvar),
            atol=1e-15)

    def test_logvar_is_clamped(self):
        spec = vae_spec(hidden=())
        params = init_params(spec, seed=7)
        for layer in params.encoder:
            layer.weight *= 1e4
        x = click_batch(np.random.default_rng(8), 3, spec.n_items)
        state = encode(params, spec, x)
        assert state.logvar.max() <= LOGVAR_CLAMP
        assert state.logvar.min() >= -LOGVAR_CLAMP

    def test_dae_returns_plain_codes(self):
        spec = dae_spec()
        params = init_params(spec, seed=9)
        x = click_batch(np.random.default_rng(10), 4, spec.n_items)
        z = encode(params, spec, x)
        assert not isinstance(z, VariationalState)
        assert z.shape == (4, spec.latent_dim)

    def test_rejects_wrong_width(self):
        spec = vae_spec(n_items=12)
        params = init_params(spec, seed=1)
        with pytest.raises(ShapeError):
            encode(params, spec, np.zeros((2, 13)))


class TestDecode:
    def test_zero_hidden_is_affine(self):
        spec = vae_spec(hidden=())
        params = init_params(spec, seed=11)
        z = np.random.default_rng(12).normal(size=(5, spec.latent_dim))
        expected = z @ params.decoder[0].weight + params.decoder[0].bias
        np.testing.assert_allclose(decode(params, spec, z), expected,
                                   atol=1e-12)

    def test_identical_rows_identical_outputs(self):
        spec = dae_spec()
        params = init_params(spec, seed=13)
        z = np.tile(np.random.default_rng(14).normal(size=spec.latent_dim),
                    (3, 1))
        out = decode(params, spec, z)
        np.testing.assert_array_equal(out[0], out[1])
        np.testing.assert_array_equal(out[0], out[2])


class TestDaeComposition:
    def test_zero_hidden_forward_is_one_affine_map(self):
        """With no hidden layers and no dropout, the whole denoising
        model collapses to x_hat @ (W1 @ W2) + (b1 @ W2 + b2)."""
        spec = dae_spec(hidden=(), keep=1.0)
        params = init_params(spec, seed=15)
        x = click_batch(np.random.default_rng(16), 4, spec.n_items)
        w1, b1 = params.encoder[0].weight, params.encoder[0].bias
        w2, b2 = params.decoder[0].weight, params.decoder[0].bias
        x_hat = normalize_rows(x)
        expected = x_hat @ (w1 @ w2) + (b1 @ w2 + b2)
        got = predict_scores(params, spec, x, exclude_fold_in=False)
        np.testing.assert_allclose(got, expected, atol=1e-12)


class TestKl:
    def test_standard_normal_has_zero_kl(self):
        kl, gmu, glv = kl_diag_gaussian(np.zeros((2, 3)), np.zeros((2, 3)))
        np.testing.assert_array_equal(kl, np.zeros(2))
        np.testing.assert_array_equal(gmu, np.zeros((2, 3)))
        np.testing.assert_array_equal(glv, np.zeros((2, 3)))

    def test_unit_mean_gives_half(self):
        kl, _, _ = kl_diag_gaussian(np.array([[1.0]]), np.array([[0.0]]))
        np.testing.assert_allclose(kl, [0.5], atol=1e-15)

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(17)
        mu = rng.normal(size=5)
        logvar = rng.normal(scale=0.5, size=5)
        _, gmu, glv = kl_diag_gaussian(mu, logvar)

        def kl_of(m, lv):
            return float(kl_diag_gaussian(m, lv)[0])

        step = 1e-6
        for i in range(5):
            m = mu.copy()
            m[i] += step
            up = kl_of(m, logvar)
            m[i] -= 2 * step
            down = kl_of(m, logvar)
            np.testing.assert_allclose((up - down) / (2 * step), gmu[i],
                                       rtol=1e-6)
            lv = logvar.copy()
            lv[i] += step
            up = kl_of(mu, lv)
            lv[i] -= 2 * step
            down = kl_of(mu, lv)
            np.testing.assert_allclose((up - down) / (2 * step), glv[i],
                                       rtol=1e-6)

    def test_matches_monte_carlo(self):
        """Analytic KL within 3 standard errors of a 1e5-sample estimate
        of E_q[log q - log p] (seed pinned; the acceptance suite runs 50
        fresh draws)."""
        rng = np.random.default_rng(123)
        mu = rng.normal(0, 1, 6)
        logvar = rng.normal(0, 0.5, 6)
        kl, _, _ = kl_diag_gaussian(mu, logvar)
        r = np.random.default_rng(1)
        n = 100_000
        z = mu + r.standard_normal((n, 6)) * np.exp(0.5 * logvar)
        var = np.exp(logvar)
        logq = -0.5 * (((z - mu) ** 2) / var + np.log(2 * np.pi)
                       + logvar).sum(axis=1)
        logp = -0.5 * (z ** 2 + np.log(2 * np.pi)).sum(axis=1)
        gap = logq - logp
        se = gap.std(ddof=1) / np.sqrt(n)
        assert abs(gap.mean() - float(kl)) < 3 * se

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ShapeError):
            kl_diag_gaussian(np.zeros(3), np.zeros(4))


class TestObjective:
    def test_beta_zero_is_pure_reconstruction(self):
        """With beta = 0 the loss must equal the negative mean
        log-likelihood recomputed independently from encode + decode
        with the same seed."""
        spec = vae_spec(keep=0.5)
        params = init_params(spec, seed=18)
        x = click_batch(np.random.default_rng(19), 5, spec.n_items)
        loss, _ = objective_and_grads(params, spec, x, beta=0.0, seed=77,
                                      train_mode=True)
        state = encode(params, spec, x, seed=77, train_mode=True)
        f = decode(params, spec, state.z)
        ll, _ = log_likelihood(spec.likelihood, x, f)
        np.testing.assert_allclose(loss, -ll.mean(), rtol=1e-12)

    def test_beta_raises_the_loss_by_mean_kl(self):
        spec = vae_spec(keep=0.5)
        params = init_params(spec, seed=20)
        x = click_batch(np.random.default_rng(21), 5, spec.n_items)
        loss0, _ = objective_and_grads(params, spec, x, beta=0.0, seed=5)
        loss1, _ = objective_and_grads(params, spec, x, beta=1.0, seed=5)
        state = encode(params, spec, x, seed=5, train_mode=True)
        kl, _, _ = kl_diag_gaussian(state.mu, state.logvar)
        np.testing.assert_allclose(loss1 - loss0, kl.mean(), rtol=1e-10)
        assert loss1 >= loss0

    def test_weight_decay_adds_the_penalty_everywhere(self):
        spec = dae_spec()
        params = init_params(spec, seed=22)
        x = click_batch(np.random.default_rng(23), 4, spec.n_items)
        plain, grads_plain = objective_and_grads(params, spec, x, seed=9,
                                                 weight_decay=0.0)
        decayed, grads_decayed = objective_and_grads(params, spec, x, seed=9,
                                                     weight_decay=0.1)
        penalty = 0.1 * 0.5 * sum(float((p * p).sum())
                                  for p in param_arrays(params))
        np.testing.assert_allclose(decayed - plain, penalty, rtol=1e-10)
        for g0, g1, p in zip(grads_plain, grads_decayed,
                             param_arrays(params)):
            np.testing.assert_allclose(g1 - g0, 0.1 * p, atol=1e-12)

    @pytest.mark.parametrize("make_spec,ll", [
        (vae_spec, "multinomial"),
        (vae_spec, "gaussian"),
        (dae_spec, "logistic"),
    ])
    def test_grads_match_finite_differences(self, make_spec, ll):
        """Spot checks here; the gradcheck command sweeps all 18
        configurations."""
        spec = make_spec(n_items=10, latent=2, hidden=(5,), keep=0.5, ll=ll)
        params = init_params(spec, seed=24)
        x = click_batch(np.random.default_rng(25), 3, spec.n_items)

        def loss_fn():
            loss, _ = objective_and_grads(params, spec, x, beta=0.6, seed=3,
                                          train_mode=True, weight_decay=0.01)
            return loss

        _, grads = objective_and_grads(params, spec, x, beta=0.6, seed=3,
                                       train_mode=True, weight_decay=0.01)
        named = named_param_arrays(params)
        analytic = {name: g for (name, _), g in zip(named, grads)}
        err, _ = grad_check(loss_fn, named, analytic, step=1e-5)
        assert err < 1e-4

    def test_non_finite_input_raises(self):
        spec = dae_spec()
        params = init_params(spec, seed=26)
        x = np.zeros((2, spec.n_items))
        x[0, 0] = np.inf
        with np.errstate(invalid="ignore"), pytest.raises(NumericError):
            objective_and_grads(params, spec, x, seed=0)


class TestPredictScores:
    def test_fold_in_items_rank_last(self):
        spec = vae_spec()
        params = init_params(spec, seed=27)
        x = click_batch(np.random.default_rng(28), 4, spec.n_items)
        scores = predict_scores(params, spec, x)
        assert (scores[x > 0] == NEG_INF_SENTINEL).all()
        assert (scores[x == 0] > NEG_INF_SENTINEL).all()

    def test_exclusion_can_be_turned_off(self):
        spec = vae_spec()
        params = init_params(spec, seed=29)
        x = click_batch(np.random.default_rng(30), 2, spec.n_items)
        raw = predict_scores(params, spec, x, exclude_fold_in=False)
        assert (raw[x > 0] != NEG_INF_SENTINEL).all()

    def test_identical_histories_identical_scores(self):
        spec = dae_spec()
        params = init_params(spec, seed=31)
        row = click_batch(np.random.default_rng(32), 1, spec.n_items)
        two = np.vstack([row, row])
        scores = predict_scores(params, spec, two)
        np.testing.assert_array_equal(scores[0], scores[1])

    def test_accepts_single_row(self):
        spec = vae_spec()
        params = init_params(spec, seed=33)
        row = click_batch(np.random.default_rng(34), 1, spec.n_items)[0]
        scores = predict_scores(params, spec, row)
        assert scores.shape == (1, spec.n_items)


class TestInitParams:
    def test_deterministic_and_seed_sensitive(self):
        spec = vae_spec()
        a = init_params(spec, seed=5)
        b = init_params(spec, seed=5)
        c = init_params(spec, seed=6)
        for pa, pb in zip(param_arrays(a), param_arrays(b)):
            np.testing.assert_array_equal(pa, pb)
        assert any((pa != pc).any()
                   for pa, pc in zip(param_arrays(a), param_arrays(c)))

    def test_glorot_bounds_and_zero_biases(self):
        spec = vae_spec(n_items=50, latent=4, hidden=(10,))
        params = init_params(spec, seed=7)
        first = params.encoder[0]
        limit = np.sqrt(6.0 / (50 + 10))
        assert np.abs(first.weight).max() <= limit
        assert not first.bias.any()


class TestCheckpoint:
    def roundtrip(self, tmp_path, spec, seed=40):
        params = init_params(spec, seed=seed)
        item_ids = [f"item-{j}" for j in range(spec.n_items)]
        path = tmp_path / "m.mvae"
        save_checkpoint(path, params, spec, item_ids)
        return path, params, load_checkpoint(path)

    def test_round_trip_exact(self, tmp_path):
        spec = vae_spec(n_items=9, latent=2, hidden=(4,),
                        ll="gaussian")
        path, params, (loaded, spec2, item_ids) = self.roundtrip(tmp_path,
                                                                 spec)
        assert spec2.kind == spec.kind
        assert spec2.n_items == spec.n_items
        assert spec2.latent_dim == spec.latent_dim
        assert spec2.hidden_dims == spec.hidden_dims
        assert spec2.likelihood == spec.likelihood
        assert item_ids == [f"item-{j}" for j in range(9)]
        for pa, pb in zip(param_arrays(params), param_arrays(loaded)):
            np.testing.assert_array_equal(pa, pb)

    @pytest.mark.parametrize("kind", ["vae", "dae"])
    @pytest.mark.parametrize("ll", ["multinomial", "gaussian", "logistic"])
    def test_all_kind_likelihood_combinations(self, tmp_path, kind, ll):
        spec = ModelSpec(kind, 7, 2, (3,), LikelihoodKind(ll))
        _, _, (_, spec2, _) = self.roundtrip(tmp_path, spec)
        assert spec2.kind == kind
        assert spec2.likelihood.kind == ll

    def test_saves_are_byte_identical(self, tmp_path):
        spec = dae_spec(n_items=6, latent=2, hidden=())
        params = init_params(spec, seed=41)
        ids = [f"i{j}" for j in range(6)]
        save_checkpoint(tmp_path / "a.mvae", params, spec, ids)
        save_checkpoint(tmp_path / "b.mvae", params, spec, ids)
        assert (tmp_path / "a.mvae").read_bytes() \
            == (tmp_path / "b.mvae").read_bytes()

    def test_scores_survive_the_round_trip(self, tmp_path):
        spec = vae_spec(n_items=11, latent=3, hidden=(5,))
        path, params, (loaded, spec2, _) = self.roundtrip(tmp_path, spec)
        x = click_batch(np.random.default_rng(42), 3, spec.n_items)
        np.testing.assert_array_equal(
            predict_scores(params, spec, x),
            predict_scores(loaded, spec2, x))

    def test_flipped_byte_is_detected(self, tmp_path):
        spec = vae_spec(n_items=8, latent=2, hidden=(4,))
        path, _, _ = self.roundtrip(tmp_path, spec)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptCheckpointError, match="CRC"):
            load_checkpoint(path)

    def test_truncation_is_detected(self, tmp_path):
        spec = vae_spec(n_items=8, latent=2, hidden=(4,))
        path, _, _ = self.roundtrip(tmp_path, spec)
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_bad_magic_is_detected(self, tmp_path):
        path = tmp_path / "m.mvae"
        path.write_bytes(b"WHAT" + b"\x00" * 64)
        with pytest.raises(CorruptCheckpointError, match="magic"):
            load_checkpoint(path)

    def test_wrong_item_table_size_rejected_at_save(self, tmp_path):
        spec = vae_spec(n_items=8)
        params = init_params(spec, seed=43)
        with pytest.raises(ShapeError):
            save_checkpoint(tmp_path / "m.mvae", params, spec, ["only-one"])


class TestCloneParams:
    def test_deep_copy(self):
        spec = dae_spec()
        params = init_params(spec, seed=44)
        cloned = clone_params(params)
        cloned.encoder[0].weight += 1.0
        assert (params.encoder[0].weight
                != cloned.encoder[0].weight).any()
