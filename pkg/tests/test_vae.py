import math

import numpy as np
import pytest

from latentaug import vae
from latentaug.data import ToySpec, toy_images
from latentaug.errors import DimensionError, InsufficientDataError, ParseError, VersionError
from latentaug.tensor import Tensor
from oracles import mc_kl


@pytest.fixture(scope="module")
def small_model():
    return vae.build_vae(0, (4, 4, 1), 3, (8, 6), np.random.default_rng(0))


def _zero_weights(layers):
    for layer in layers:
        layer.weight.data[:] = 0.0


def test_encode_shapes(small_model):
    x = np.random.default_rng(1).uniform(size=(4, 16))
    mu, logvar = vae.encode(small_model, x)
    assert mu.shape == logvar.shape == (4, 3)


def test_encode_is_deterministic(small_model):
    x = np.random.default_rng(2).uniform(size=(2, 16))
    a, b = vae.encode(small_model, x), vae.encode(small_model, x)
    assert np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)


def test_zero_weight_encoder_returns_bias():
    model = vae.build_vae(0, (4, 4, 1), 3, (8, 6), np.random.default_rng(0))
    _zero_weights([model.mu_head])
    model.mu_head.bias.data[:] = [0.5, -1.0, 2.0]
    x = np.random.default_rng(3).uniform(size=(5, 16))
    mu, _ = vae.encode(model, x)
    assert np.array_equal(mu.data, np.tile([0.5, -1.0, 2.0], (5, 1)))


def test_encode_wrong_width(small_model):
    with pytest.raises(DimensionError):
        vae.encode(small_model, np.zeros((2, 15)))


def test_reparameterize_examples():
    mu = np.array([[0.3, -1.2]])
    assert np.array_equal(vae.reparameterize(mu, np.zeros_like(mu), np.zeros_like(mu)).data, mu)
    e = np.array([[0.7, -0.4]])
    assert np.array_equal(vae.reparameterize(np.zeros((1, 2)), np.zeros((1, 2)), e).data, e)
    z = vae.reparameterize([1.0], [math.log(4.0)], [0.5])
    assert z.data.tolist() == pytest.approx([2.0], abs=1e-15)


def test_reparameterize_shape_mismatch():
    with pytest.raises(DimensionError):
        vae.reparameterize(np.zeros(2), np.zeros(3), np.zeros(2))


def test_reparameterize_statistics():
    rng = np.random.default_rng(4)
    mu, logvar = np.array([1.5, -0.5]), np.array([0.4, -1.0])
    eps = rng.standard_normal((10_000, 2))
    z = vae.reparameterize(np.tile(mu, (10_000, 1)), np.tile(logvar, (10_000, 1)), eps).data
    assert np.allclose(z.mean(axis=0), mu, rtol=0.05)
    assert np.allclose(z.std(axis=0), np.exp(logvar / 2), rtol=0.05)


def test_decode_range_and_determinism(small_model):
    z = np.random.default_rng(5).standard_normal((3, 3)) * 50
    out = vae.decode(small_model, z).data
    assert out.shape == (3, 16)
    assert np.all((out > 0) & (out < 1))
    assert np.array_equal(out, vae.decode(small_model, z).data)


def test_zero_weight_decoder_is_sigmoid_of_bias():
    model = vae.build_vae(0, (2, 2, 1), 2, (3, 3), np.random.default_rng(0))
    _zero_weights([model.decoder[-1]])
    bias = np.array([-1.0, 0.0, 0.5, 2.0])
    model.decoder[-1].bias.data[:] = bias
    out = vae.decode(model, np.random.default_rng(6).standard_normal((4, 2))).data
    assert np.allclose(out, np.tile(1 / (1 + np.exp(-bias)), (4, 1)), rtol=0, atol=1e-15)


def test_kl_examples():
    assert vae.elbo_loss([[0.5]], [[0.5]], [[0.0]], [[0.0]]).kl == 0.0
    assert vae.elbo_loss([[0.5]], [[0.5]], [[1.0]], [[0.0]]).kl == pytest.approx(0.5, abs=1e-15)


def test_reconstruction_of_half_is_ln2():
    loss = vae.elbo_loss([[0.5]], [[0.5]], [[0.0]], [[0.0]])
    assert loss.reconstruction == pytest.approx(math.log(2), abs=1e-12)
    assert loss.total == loss.reconstruction + loss.kl


def test_exact_zero_and_one_are_clamped():
    loss = vae.elbo_loss([[1.0, 0.0]], [[0.0, 1.0]], [[0.0]], [[0.0]])
    assert loss.reconstruction == pytest.approx(-2 * math.log(vae.PROB_EPS), rel=1e-6)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(7)
    for _ in range(10):
        mu = rng.normal(0, 1, size=4)
        logvar = rng.uniform(-1, 1, size=4)
        closed = float(vae.kl_divergence(mu, logvar))
        assert abs(mc_kl(mu, logvar, 100_000, rng) - closed) <= 0.02 * closed


def test_kl_nonnegative_and_zero_only_at_prior():
    rng = np.random.default_rng(8)
    mu, logvar = rng.normal(size=(200, 3)), rng.normal(size=(200, 3))
    assert np.all(vae.kl_divergence(mu, logvar) > 0)
    assert vae.kl_divergence(np.zeros(3), np.zeros(3)) == 0.0


def _toy_class(n):
    return toy_images(ToySpec())[1][:n]


def test_training_is_seed_deterministic():
    images = _toy_class(6)
    cfg = vae.VaeConfig(latent_dim=4, hidden=(16, 8), epochs=3, lr=1e-3, batch_size=4)
    _, h1 = vae.train_class_vae(images, cfg, np.random.default_rng(9))
    _, h2 = vae.train_class_vae(images, cfg, np.random.default_rng(9))
    assert h1 == h2 and len(h1) == 3


def test_training_needs_two_images():
    with pytest.raises(InsufficientDataError):
        vae.train_class_vae(np.zeros((1, 4, 4)), vae.VaeConfig(epochs=1), np.random.default_rng(0))


def test_default_config_is_full_scale():
    cfg = vae.VaeConfig()
    assert (cfg.latent_dim, cfg.epochs, cfg.lr) == (256, 1000, 1e-4)


@pytest.mark.slow
def test_desk_training_halves_loss():
    images = _toy_class(40)
    cfg = vae.VaeConfig(latent_dim=32, hidden=(512, 256), epochs=200, lr=1e-3, batch_size=24)
    _, history = vae.train_class_vae(images, cfg, np.random.default_rng(10))
    assert len(history) == 200
    assert history[-1] < 0.5 * history[0]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    images = _toy_class(8)
    cfg = vae.VaeConfig(latent_dim=4, hidden=(32, 16), epochs=5, lr=1e-3, batch_size=4)
    model, _ = vae.train_class_vae(images, cfg, np.random.default_rng(11), class_label=1)
    path = tmp_path_factory.mktemp("ckpt") / "vae.ckpt"
    vae.save_checkpoint(model, path)
    return model, path, images


def test_checkpoint_round_trip(trained):
    model, path, images = trained
    loaded = vae.load_checkpoint(path)
    assert loaded.class_label == 1 and loaded.image_shape == model.image_shape
    for a, b in zip(vae.encode(model, images), vae.encode(loaded, images)):
        assert np.max(np.abs(a.data - b.data)) <= 1e-5


def test_truncated_checkpoint(trained, tmp_path):
    _, path, _ = trained
    raw = path.read_bytes()
    bad = tmp_path / "cut.ckpt"
    bad.write_bytes(raw[: len(raw) - 7])
    with pytest.raises(ParseError) as info:
        vae.load_checkpoint(bad)
    assert info.value.offset > 0


def test_wrong_magic(trained, tmp_path):
    _, path, _ = trained
    bad = tmp_path / "magic.ckpt"
    bad.write_bytes(path.read_bytes().replace(b"latentaug-vae-v1", b"latentaug-clf-v1", 1))
    with pytest.raises(VersionError):
        vae.load_checkpoint(bad)


def test_loss_graph_backpropagates(small_model):
    x = np.random.default_rng(12).uniform(0.1, 0.9, size=(2, 16))
    mu, logvar = vae.encode(small_model, x)
    loss = vae.elbo_loss(x, vae.decode(small_model, mu), mu, logvar)
    assert isinstance(loss.graph, Tensor) and loss.graph.item() == pytest.approx(loss.total)
