import numpy as np
import pytest

from ordergan.cvae import (
    CvaeConfig,
    CvaeModel,
    cvae_loss,
    cvae_sample,
    init_cvae,
    kl_divergence,
    posterior_collapsed,
    train_cvae,
)
from gradcheck import central_difference, relative_error


def product_world(n=3000, seed=0):
    """Orders whose non-product columns depend on a 4-dim product vector."""
    rng = np.random.default_rng(seed)
    protos = rng.uniform(-0.8, 0.8, (12, 4))
    p = protos[rng.integers(0, 12, n)]
    A = rng.standard_normal((4, 6)) * 0.5
    rest = np.tanh(p @ A + 0.1 * rng.standard_normal((n, 6)))
    return np.hstack([rest[:, :3], p, rest[:, 3:]])


CFG = CvaeConfig(dim=10, prod_start=3, prod_stop=7, latent=3, enc_hidden=(16,), dec_hidden=(16,), epochs=8, batch=64)


class TestKl:
    def test_prior_match_is_zero(self):
        assert kl_divergence(np.zeros((3, 4)), np.zeros((3, 4))) == 0.0

    def test_unit_mean_shift(self):
        assert kl_divergence(np.array([[1.0]]), np.array([[0.0]])) == 0.5

    def test_loss_is_kl_only_for_perfect_reconstruction(self):
        # a decoder that copies its context reproduces x exactly when x is the context
        cfg = CvaeConfig(dim=2, prod_start=0, prod_stop=2, latent=1, enc_hidden=(3,), dec_hidden=(2,))
        m = init_cvae(cfg)
        m.params["dec.W0"] = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        m.params["dec.b0"] = np.zeros((1, 2))
        m.params["dec.W1"] = np.eye(2) * 50.0
        m.params["dec.b1"] = np.zeros((1, 2))
        x = np.array([[1.0, 1.0], [1.0, 1.0]])
        # tanh(50) rounds to 1.0 exactly in float64
        eps = np.zeros((2, 1))
        loss, _, parts = cvae_loss(m.params, x, x, eps, 0.7, 1)
        assert parts["reconstruction"] == 0.0
        assert loss == pytest.approx(0.7 * parts["kl"], abs=1e-15)


def test_loss_gradient_matches_finite_differences():
    cfg = CvaeConfig(dim=5, prod_start=1, prod_stop=3, latent=2, enc_hidden=(4,), dec_hidden=(4,))
    m = init_cvae(cfg)
    rng = np.random.default_rng(2)
    x = rng.uniform(-0.9, 0.9, (6, 5))
    eps = rng.standard_normal((6, 2))
    _, grads, _ = cvae_loss(m.params, x, x[:, 1:3], eps, 1.0, 2)
    names = sorted(m.params)

    def f(*arrays):
        return cvae_loss(dict(zip(names, arrays)), x, x[:, 1:3], eps, 1.0, 2)[0]

    numeric = central_difference(f, [m.params[k] for k in names], h=1e-6)
    for k, num in zip(names, numeric):
        assert relative_error(grads[k], num) < 1e-5


@pytest.fixture(scope="module")
def trained():
    data = product_world()
    return train_cvae(CFG, data[:2400]), data


class TestTrained:
    def test_epoch_losses_settle(self, trained):
        model, _ = trained
        losses = [m["loss"] for m in model.metrics]
        after = losses[1:]
        rises = [(b - a) / a for a, b in zip(after, after[1:]) if b > a]
        assert len(rises) <= max(1, int(0.1 * len(after)))
        assert all(r < 0.05 for r in rises)

    def test_beats_mean_predictor(self, trained):
        model, data = trained
        held = data[2400:]
        mse = ((model.reconstruct(held) - held) ** 2).mean()
        assert mse < held.var(axis=0).mean()

    def test_no_collapse(self, trained):
        model, data = trained
        assert not posterior_collapsed(model, data)
        assert model.beta_kl == 1.0 and not model.collapse_fallback

    def test_sample_contract(self, trained):
        model, data = trained
        assert cvae_sample(model, 0, data[0, 3:7]).shape == (0, 10)
        x = cvae_sample(model, 300, data[0, 3:7], seed=4)
        assert np.all(np.abs(x) < 1)
        assert np.array_equal(x, cvae_sample(model, 300, data[0, 3:7], seed=4))
        with pytest.raises(ValueError):
            cvae_sample(model, 3, np.zeros(5))

    def test_deterministic_training(self, trained):
        model, data = trained
        again = train_cvae(CFG, data[:2400])
        for k in model.params:
            assert np.array_equal(model.params[k], again.params[k])

    def test_save_load(self, trained, tmp_path):
        model, data = trained
        model.save(tmp_path / "cvae.ogan")
        back = CvaeModel.load(tmp_path / "cvae.ogan")
        assert back.config == model.config and back.step == model.step
        assert np.array_equal(back.reconstruct(data[:5]), model.reconstruct(data[:5]))


def test_untrained_sampling_rejected():
    with pytest.raises(ValueError, match="untrained"):
        cvae_sample(init_cvae(CFG), 3, np.zeros(4))


def test_collapse_falls_back(monkeypatch):
    import ordergan.cvae as cvae

    monkeypatch.setattr(cvae, "posterior_collapsed", lambda model, data: True)
    model = cvae.train_cvae(CFG.replace(epochs=1), product_world(300))
    assert model.beta_kl == 0.5 and model.collapse_fallback


def test_default_widths_mirror_gan():
    cfg = CvaeConfig()
    assert (cfg.latent, cfg.enc_hidden, cfg.dec_hidden) == (16, (128, 64), (64, 128))
