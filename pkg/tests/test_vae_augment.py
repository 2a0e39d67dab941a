import numpy as np
import pytest

from cgssl.datasets import generate_toy_dataset
from cgssl.errors import InvalidInputError
from cgssl.models import VAEModel, VAESpec, build_vae
from cgssl.nn import dtype_scope
from cgssl.nn.layers import Flatten, Linear, ReLU, Reshape, Sequential, Sigmoid
from cgssl.seeding import rng_for
from cgssl.vae_augment import (
    VAETrainConfig,
    _elbo_forward,
    assemble_vae_train_set,
    elbo_backward,
    elbo_loss,
    generate_reconstructions,
    generate_synthetic,
    heldout_reconstruction_mse,
    train_vae,
)


class StubVAE:
    """Duck-typed VAE with a controllable posterior and an identity decoder."""

    def __init__(self, image_shape=(4, 4, 3), latent_dim=2, mu_value=0.0, logvar_value=0.0):
        self.spec = VAESpec(latent_dim=latent_dim, image_shape=image_shape)
        self.mu_value = mu_value
        self.logvar_value = logvar_value
        self.dtype = np.float64
        self._last = None

    def encode_batch(self, x, training=False, update_stats=None):
        self._last = np.asarray(x, dtype=np.float64)
        n = self._last.shape[0]
        return (np.full((n, self.spec.latent_dim), self.mu_value),
                np.full((n, self.spec.latent_dim), self.logvar_value))

    def decode_batch(self, z, training=False):
        return self._last


class TestElboLoss:
    def test_posterior_equals_prior_gives_zero_kl(self):
        stub = StubVAE(mu_value=0.0, logvar_value=0.0)
        batch = rng_for(0, "b").uniform(size=(3, 4, 4, 3))
        total, recon, kl = elbo_loss(stub, batch, np.zeros((3, 2)))
        assert kl == 0.0

    def test_unit_mean_kl_is_half_latent_dim(self):
        for d in (2, 16, 32):
            stub = StubVAE(latent_dim=d, mu_value=1.0, logvar_value=0.0)
            batch = rng_for(1, "b").uniform(size=(2, 4, 4, 3))
            _, _, kl = elbo_loss(stub, batch, np.zeros((2, d)))
            assert abs(kl - 0.5 * d) < 1e-9

    def test_identity_decoder_gives_zero_recon(self):
        stub = StubVAE()
        batch = rng_for(2, "b").uniform(size=(4, 4, 4, 3))
        total, recon, kl = elbo_loss(stub, batch, np.zeros((4, 2)))
        assert recon == 0.0
        assert total == kl

    def test_total_weights_kl(self):
        stub = StubVAE(mu_value=0.5)
        batch = rng_for(3, "b").uniform(size=(2, 4, 4, 3))
        total_1, recon, kl = elbo_loss(stub, batch, np.zeros((2, 2)), kl_weight=1.0)
        total_0, _, _ = elbo_loss(stub, batch, np.zeros((2, 2)), kl_weight=0.0)
        assert abs(total_1 - (recon + kl)) < 1e-12
        assert total_0 == recon

    def test_kl_nonnegative_property(self):
        rng = np.random.default_rng(4)
        from cgssl.vae_augment import _gaussian_kl

        for _ in range(200):
            mu = rng.normal(size=(3, 8)) * 3
            logvar = rng.normal(size=(3, 8)) * 2
            assert _gaussian_kl(mu, logvar) >= 0.0

    def test_kl_grows_as_logvar_shrinks_below_zero(self):
        from cgssl.vae_augment import _gaussian_kl

        values = [_gaussian_kl(np.zeros((1, 4)), np.full((1, 4), lv))
                  for lv in (0.0, -1.0, -2.0, -4.0, -8.0)]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_shape_validation(self):
        vae = build_vae(VAESpec(latent_dim=4, image_shape=(8, 8, 3)), seed=0)
        with pytest.raises(InvalidInputError):
            elbo_loss(vae, np.zeros((2, 4, 4, 3)), np.zeros((2, 4)))
        with pytest.raises(InvalidInputError):
            elbo_loss(vae, np.zeros((2, 8, 8, 3)), np.zeros((2, 5)))


class TinyVAE(VAEModel):
    """Two-unit-latent VAE over 4x4x3 images, smooth enough for eps=1e-4 checks."""

    def __init__(self, seed=0):
        self.spec = VAESpec(latent_dim=2, image_shape=(4, 4, 3))
        self.seed = seed
        rng = rng_for(seed, "tiny-vae")
        self.trunk = Sequential([
            ("flatten", Flatten()),
            ("fc", Linear(48, 12, rng)),
            ("relu", ReLU()),
        ])
        self.mu_head = Linear(12, 2, rng)
        self.logvar_head = Linear(12, 2, rng)
        self.decoder = Sequential([
            ("fc", Linear(2, 48, rng)),
            ("sigmoid", Sigmoid()),
            ("reshape", Reshape((4, 4, 3))),
        ])


class TestGradientCheck:
    def test_tiny_vae_elbo_vs_central_differences(self):
        """Negative-ELBO gradients vs central differences (eps=1e-4)."""
        with dtype_scope(np.float64):
            vae = TinyVAE(seed=3)
            rng = np.random.default_rng(5)
            batch = rng.uniform(0.1, 0.9, size=(4, 4, 4, 3))
            noise = rng.standard_normal((4, 2))

            total, _, _, cache = _elbo_forward(vae, batch, noise, 1.0, update_stats=False)
            elbo_backward(vae, 1.0, cache)
            grads = {k: v.copy() for k, v in vae.named_grads().items()}

            eps = 1e-4
            worst = 0.0
            for name, arr in vae.named_params().items():
                flat = arr.reshape(-1)
                for i in rng.choice(flat.size, size=min(30, flat.size), replace=False):
                    v = flat[i]
                    flat[i] = v + eps
                    lp = elbo_loss(vae, batch, noise)[0]
                    flat[i] = v - eps
                    lm = elbo_loss(vae, batch, noise)[0]
                    flat[i] = v
                    fd = (lp - lm) / (2 * eps)
                    an = grads[name].reshape(-1)[i]
                    worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-4))
            assert worst < 1e-3, worst


class TestAssemble:
    def test_no_padding_returns_input(self, tiny_labeled):
        low = tiny_labeled.take(range(5))
        out = assemble_vae_train_set(low, tiny_labeled.take(range(5, 40)), 0, seed=1)
        assert out is low

    def test_padding_counts_and_uniqueness(self, tiny_labeled):
        low = tiny_labeled.take(range(5))
        rest = tiny_labeled.take(range(5, 40))
        out = assemble_vae_train_set(low, rest, 30, seed=2)
        assert len(out) == 35
        padded_ids = set(out.ids.tolist()) - set(low.ids.tolist())
        assert len(padded_ids) == 30
        assert padded_ids <= set(rest.ids.tolist())

    def test_deterministic(self, tiny_labeled):
        low = tiny_labeled.take(range(3))
        rest = tiny_labeled.take(range(3, 40))
        a = assemble_vae_train_set(low, rest, 10, seed=3)
        b = assemble_vae_train_set(low, rest, 10, seed=3)
        assert np.array_equal(a.ids, b.ids)

    def test_pad_count_exceeding_pool_rejected(self, tiny_labeled):
        with pytest.raises(InvalidInputError):
            assemble_vae_train_set(tiny_labeled.take(range(2)), tiny_labeled.take(range(2, 10)),
                                   pad_count=20, seed=0)


class TestTrainAndGenerate:
    @pytest.fixture(scope="class")
    def trained(self):
        data = generate_toy_dataset(4, 10, 16, seed=21)
        config = VAETrainConfig(latent_dim=8, epochs=8, batch_size=16, learning_rate=2e-3, seed=5)
        return data, train_vae(data, config)

    def test_training_reduces_loss(self, trained):
        data, vae = trained
        fresh = train_vae(data, VAETrainConfig(latent_dim=8, epochs=1, batch_size=16,
                                               learning_rate=1e-12, seed=5))
        noise = np.zeros((len(data), 8))
        initial = elbo_loss(fresh, data.images, noise)[0]
        final = elbo_loss(vae, data.images, noise)[0]
        assert final < initial

    def test_deterministic(self):
        data = generate_toy_dataset(2, 8, 16, seed=22)
        cfg = VAETrainConfig(latent_dim=4, epochs=3, batch_size=8, learning_rate=1e-3, seed=9)
        a, b = train_vae(data, cfg), train_vae(data, cfg)
        for k, v in a.named_params().items():
            assert np.array_equal(v, b.named_params()[k])

    def test_reconstruction_contract(self, trained):
        data, vae = trained
        seeds = data.take(range(7))
        rec = generate_reconstructions(vae, seeds, id_start=500)
        assert len(rec) == 7
        assert np.array_equal(rec.labels, seeds.labels)
        assert rec.images.min() >= 0.0 and rec.images.max() <= 1.0
        assert rec.images.shape == seeds.images.shape
        assert rec.ids.min() == 500

    def test_reconstruction_beats_gray_baseline(self, trained):
        data, vae = trained
        rec = generate_reconstructions(vae, data)
        mse = float(((rec.images - data.images) ** 2).mean())
        gray = float(((0.5 - data.images) ** 2).mean())
        assert mse < gray

    def test_synthetic_sizes(self, trained):
        _, vae = trained
        for k in (0, 1, 17):
            out = generate_synthetic(vae, k, seed=3)
            assert len(out) == k
        assert generate_synthetic(vae, 0, seed=3).images.shape == (0, 16, 16, 3)

    def test_synthetic_deterministic(self, trained):
        _, vae = trained
        a = generate_synthetic(vae, 5, seed=4)
        b = generate_synthetic(vae, 5, seed=4)
        assert np.array_equal(a.images, b.images)
        c = generate_synthetic(vae, 5, seed=5)
        assert not np.array_equal(a.images, c.images)

    def test_synthetic_range(self, trained):
        _, vae = trained
        out = generate_synthetic(vae, 9, seed=6)
        assert out.images.min() >= 0.0 and out.images.max() <= 1.0

    def test_heldout_mse_helper(self, trained):
        data, vae = trained
        val = heldout_reconstruction_mse(vae, data)
        assert 0.0 <= val < 0.25
