import inspect

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qaan import nn
from qaan.adversarial import (GanConfig, TrainerState, d_mean_hook, feature_kl, feature_kl_hook, gan_losses,
                              gan_losses_from_logits, generate, generator_gradients, init_state, latent_batch,
                              normalize_mode, sample_latents, smoothed_cross_entropy, train, train_step)
from qaan.oracles import central_difference
from qaan.pimc import TrotterConfig
from qaan.qbm import QbmParams, exact_thermal
from qaan.rbm import RbmParams

SMALL = dict(latent_dim=4, bm_hidden=2, batch_size=16, generator_hidden=8, discriminator_hidden=8,
             sampler=TrotterConfig(replicas=16))


def small_state(mode, seed=0, data_dim=6, **kw):
    cfg = GanConfig(mode=mode, **{**SMALL, **kw})
    return init_state(cfg, data_dim, np.random.default_rng(seed))


def real_batch(seed=0, n=16, d=6):
    return np.random.default_rng(seed).uniform(-1, 1, size=(n, d))


def flat(arrays):
    return np.concatenate([a.ravel() for a in arrays])


class TestLosses:
    def test_equilibrium(self):
        j_d, j_g = gan_losses(np.full(10, 0.5), np.full(10, 0.5))
        assert j_g == pytest.approx(2 * np.log(0.5))
        assert j_g == pytest.approx(-1.3863, abs=1e-4)
        assert j_d == -j_g

    @pytest.mark.parametrize("bad", [0.0, 1.0])
    def test_rejects_saturated(self, bad):
        with pytest.raises(ValueError):
            gan_losses(np.array([0.5, bad]), np.array([0.5]))

    def test_logit_form_matches(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=5), rng.normal(size=5)
        sig = lambda x: 1 / (1 + np.exp(-x))
        np.testing.assert_allclose(gan_losses_from_logits(a, b), gan_losses(sig(a), sig(b)), atol=1e-14)

    def test_logit_form_stable(self):
        j_d, j_g = gan_losses_from_logits(np.array([800.0]), np.array([-800.0]))
        assert np.isfinite(j_g) and j_g == pytest.approx(0.0) and j_d == -j_g

    @pytest.mark.parametrize("t", [0.05, 0.95])
    def test_smoothed_minimum_is_entropy(self, t):
        logit = np.log(t / (1 - t))
        best = smoothed_cross_entropy(np.array([logit]), np.array([t]))
        assert best == pytest.approx(-(t * np.log(t) + (1 - t) * np.log(1 - t)), abs=1e-12)
        for delta in (-0.3, 0.3):
            assert smoothed_cross_entropy(np.array([logit + delta]), np.array([t])) > best


class TestConfig:
    def test_defaults(self):
        cfg = GanConfig()
        assert (cfg.latent_dim, cfg.bm_hidden, cfg.batch_size, cfg.epochs) == (32, 8, 64, 30)
        assert (cfg.lr_gan, cfg.lr_bm, cfg.gibbs_k) == (2e-4, 1e-3, 5)
        assert (cfg.beta1, cfg.beta2_bm, cfg.beta2_gan) == (0.5, 0.9, 0.999)

    def test_mode_aliases(self):
        assert normalize_mode("DCGAN-dense") == "dcgan"
        assert GanConfig(mode="QAAN").mode == "qaan"
        with pytest.raises(ValueError):
            normalize_mode("wgan")

    def test_label_ranges(self):
        with pytest.raises(ValueError):
            GanConfig(fake_label_high=0.95)
        with pytest.raises(ValueError):
            GanConfig(real_label_high=1.2)

    def test_width_validation(self):
        state = small_state("aan")
        with pytest.raises(ValueError):
            TrainerState(state.config, state.generator, nn.DenseNet.build([6, 8, 3, 1], ["leaky_relu", "sigmoid", "sigmoid"],
                         np.random.default_rng(0), feature_tap=1), state.opt_g, state.opt_d, state.memory_trainer)
        with pytest.raises(ValueError):
            TrainerState(state.config, state.generator, state.discriminator, state.opt_g, state.opt_d, None)


class TestLatents:
    def test_dcgan_uniform_deterministic(self):
        state = small_state("dcgan")
        a = latent_batch(state, 500, np.random.default_rng(1))
        b = latent_batch(state, 500, np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)
        assert a.min() >= -1 and a.max() <= 1 and len(np.unique(a)) > 100

    def test_aan_zero_model_uniform_spins(self):
        state = small_state("aan")
        state.memory_trainer.params = RbmParams.zeros(4, 2)
        z = latent_batch(state, 4000, np.random.default_rng(2))
        assert set(np.unique(z)) == {-1.0, 1.0}
        assert np.all(np.abs(z.mean(axis=0)) < 3 / np.sqrt(4000))

    def test_qaan_tracks_exact_marginal(self):
        state = small_state("qaan", sampler=TrotterConfig(replicas=64, anneal_steps=10))
        p = QbmParams(2.0, [2.0, -1.5, 0.5, 0.0], [0.5, -0.5], np.full((4, 2), 0.3))
        state.memory_trainer.params = p
        n = 4000
        z, stats = sample_latents(state, n, np.random.default_rng(3))
        exact = exact_thermal(p).first_moments[:4]
        sigma = np.sqrt((1 - exact**2) / n)
        assert stats is not None
        # slices within a replica are correlated; allow a modest Trotter bias on top of 3 sigma
        assert np.all(np.abs(z.mean(axis=0) - exact) < 3 * sigma + 0.03)

    def test_generate_chunks(self):
        state = small_state("dcgan")
        out = generate(state, 25, np.random.default_rng(4), chunk=10)
        assert out.shape == (25, 6) and np.all(np.abs(out) <= 1)


class TestTrainStep:
    def test_dcgan_has_no_memory(self):
        state = small_state("dcgan")
        assert state.memory is None
        out = train_step(state, real_batch(), np.random.default_rng(5))
        assert out["j_d"] + out["j_g"] == 0.0

    @pytest.mark.parametrize("mode", ["aan", "qaan"])
    def test_memory_changes(self, mode):
        state = small_state(mode)
        before = flat(state.memory_trainer.params.arrays() if mode == "aan" else state.memory.trainable())
        out = train_step(state, real_batch(), np.random.default_rng(6))
        after = flat(state.memory_trainer.params.arrays() if mode == "aan" else state.memory.trainable())
        assert not np.allclose(before, after)
        assert np.all((out["features"] > 0) & (out["features"] < 1))
        if mode == "qaan":
            np.testing.assert_array_equal(state.memory.gamma, 2.0)

    def test_frozen_half_discriminator_gives_zero_generator_gradient(self):
        state = small_state("dcgan")
        last = state.discriminator.layers[-1]
        last.weights[:] = 0.0
        last.bias[:] = 0.0
        z = latent_batch(state, 8, np.random.default_rng(7))
        grads, _ = generator_gradients(state.generator, state.discriminator, z)
        assert all(np.all(g == 0) for g in grads)

        def loss():
            return generator_gradients(state.generator, state.discriminator, z)[1]
        numeric = central_difference(loss, state.generator.params())
        assert max(np.abs(g).max() for g in numeric) < 1e-10

    def test_generator_gradient_finite_differences(self):
        state = small_state("dcgan")
        z = latent_batch(state, 8, np.random.default_rng(8))
        for ns in (False, True):
            grads, _ = generator_gradients(state.generator, state.discriminator, z, ns)
            numeric = central_difference(lambda: generator_gradients(state.generator, state.discriminator, z, ns)[1],
                                         state.generator.params(), h=1e-6)
            np.testing.assert_allclose(flat(grads), flat(numeric), atol=1e-8)

    def test_mode_isolation(self):
        # identical seeds, injected latents and a zero memory: D and G updates coincide
        dc, aan = small_state("dcgan", seed=9), small_state("aan", seed=9)
        aan.memory_trainer.params = RbmParams.zeros(4, 2)
        z = np.random.default_rng(10).choice([-1.0, 1.0], size=(16, 4))
        train_step(dc, real_batch(), np.random.default_rng(11), latents=z)
        train_step(aan, real_batch(), np.random.default_rng(11), latents=z)
        np.testing.assert_array_equal(flat(dc.discriminator.params()), flat(aan.discriminator.params()))
        np.testing.assert_array_equal(flat(dc.generator.params()), flat(aan.generator.params()))

    def test_generator_never_takes_real_data(self):
        params = inspect.signature(generator_gradients).parameters
        assert list(params) == ["generator", "discriminator", "latents", "non_saturating"]


class TestTrain:
    def test_reproducible_log(self):
        def run():
            state = small_state("aan", seed=12, epochs=2)
            data = real_batch(13, n=64)
            train(state, data, np.random.default_rng(14), hooks=(d_mean_hook(data[:16]), feature_kl_hook(data[:16])))
            return state.metric_log
        a, b = run(), run()
        assert a == b
        assert {r[2] for r in a} == {"d_loss", "g_loss", "d_real_heldout", "bm_feature_kl"}
        assert max(r[0] for r in a) == 2

    def test_feature_kl_none_without_memory(self):
        assert feature_kl(small_state("dcgan"), real_batch()) is None

    def test_rejects_tiny_dataset(self):
        with pytest.raises(ValueError):
            train(small_state("dcgan"), real_batch(n=4), np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8), st.lists(st.floats(-30, 30), min_size=1, max_size=8))
def test_zero_sum_property(real, fake):
    j_d, j_g = gan_losses_from_logits(np.array(real), np.array(fake))
    assert j_d + j_g == 0.0
