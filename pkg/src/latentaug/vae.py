"""Class-specific variational autoencoder on flattened images.

The encoder is an MLP whose last hidden layer feeds two heads, one for the
posterior mean and one for the log-variance. The decoder mirrors the hidden
widths and ends in a sigmoid over the pixel vector. Training minimizes the
negative ELBO: Bernoulli reconstruction NLL plus the closed-form Gaussian KL.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .errors import DimensionError, InsufficientDataError, ParseError
from .layers import AdamState, DenseLayer, adam_step
from .tensor import Tensor, as_tensor, backward, clip, exp, log, relu, sigmoid

log_ = logging.getLogger(__name__)

# decoder outputs and BCE inputs are clamped to [PROB_EPS, 1 - PROB_EPS]
PROB_EPS = 1e-7


@dataclass
class VaeConfig:
    """Training hyperparameters. The defaults are the full-scale values."""

    latent_dim: int = 256
    hidden: tuple[int, ...] = (512, 256)
    epochs: int = 1000
    lr: float = 1e-4
    batch_size: int = 24


@dataclass
class VaeModel:
    class_label: int
    latent_dim: int
    image_shape: tuple[int, int, int]  # (height, width, channels)
    encoder: list[DenseLayer]
    mu_head: DenseLayer
    logvar_head: DenseLayer
    decoder: list[DenseLayer]

    def __post_init__(self):
        if self.mu_head.out_dim != self.latent_dim or self.logvar_head.out_dim != self.latent_dim:
            raise DimensionError("latent heads must both output latent_dim values")
        if self.decoder[-1].out_dim != self.n_pixels:
            raise DimensionError("decoder output must match the flattened image size")

    @property
    def n_pixels(self) -> int:
        h, w, c = self.image_shape
        return h * w * c

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for layer in [*self.encoder, self.mu_head, self.logvar_head, *self.decoder]:
            params.extend(layer.parameters())
        return params

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, layer in enumerate(self.encoder):
            named += [(f"encoder.{i}.weight", layer.weight), (f"encoder.{i}.bias", layer.bias)]
        for name, layer in (("mu_head", self.mu_head), ("logvar_head", self.logvar_head)):
            named += [(f"{name}.weight", layer.weight), (f"{name}.bias", layer.bias)]
        for i, layer in enumerate(self.decoder):
            named += [(f"decoder.{i}.weight", layer.weight), (f"decoder.{i}.bias", layer.bias)]
        return named


@dataclass
class LatentSample:
    mu: Tensor
    logvar: Tensor
    eps: Tensor
    z: Tensor


@dataclass
class LossBreakdown:
    total: float
    reconstruction: float
    kl: float
    graph: Tensor | None = field(default=None, repr=False)  # differentiable total


def build_vae(class_label: int, image_shape, latent_dim: int, hidden, rng: np.random.Generator) -> VaeModel:
    image_shape = tuple(int(s) for s in image_shape)
    if len(image_shape) == 2:
        image_shape = (*image_shape, 1)
    n_pixels = int(np.prod(image_shape))
    hidden = tuple(hidden)
    widths = (n_pixels, *hidden)
    encoder = [DenseLayer.create(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
    mu_head = DenseLayer.create(widths[-1], latent_dim, rng)
    logvar_head = DenseLayer.create(widths[-1], latent_dim, rng)
    dec_widths = (latent_dim, *reversed(hidden), n_pixels)
    decoder = [DenseLayer.create(a, b, rng) for a, b in zip(dec_widths[:-1], dec_widths[1:])]
    return VaeModel(int(class_label), int(latent_dim), image_shape, encoder, mu_head, logvar_head, decoder)


def _flatten(model: VaeModel, x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        x = x.reshape(x.shape[0], -1) if x.ndim > 2 else x.reshape(1, -1)
    if x.shape[1] != model.n_pixels:
        raise DimensionError(f"model expects {model.n_pixels} pixels, got {x.shape[1]}")
    return x


def encode(model: VaeModel, x) -> tuple[Tensor, Tensor]:
    """Posterior parameters (mu, logvar) for a batch of images."""
    h = _flatten(model, x)
    for layer in model.encoder:
        h = relu(layer(h))
    return model.mu_head(h), model.logvar_head(h)


def reparameterize(mu, logvar, eps) -> Tensor:
    mu, logvar, eps = as_tensor(mu), as_tensor(logvar), as_tensor(eps)
    if not mu.shape == logvar.shape == eps.shape:
        raise DimensionError(f"shapes differ: {mu.shape}, {logvar.shape}, {eps.shape}")
    return mu + exp(logvar * 0.5) * eps


def sample_latent(model: VaeModel, x, rng: np.random.Generator) -> LatentSample:
    mu, logvar = encode(model, x)
    eps = Tensor(rng.standard_normal(mu.shape))
    return LatentSample(mu, logvar, eps, reparameterize(mu, logvar, eps))


def decode(model: VaeModel, z) -> Tensor:
    """Pixel probabilities in [PROB_EPS, 1 - PROB_EPS], shape (batch, pixels)."""
    h = as_tensor(z)
    if h.ndim == 1:
        h = h.reshape(1, -1)
    if h.ndim != 2 or h.shape[1] != model.latent_dim:
        raise DimensionError(f"decoder expects (batch, {model.latent_dim}), got {h.shape}")
    for layer in model.decoder[:-1]:
        h = relu(layer(h))
    return clip(sigmoid(model.decoder[-1](h)), PROB_EPS, 1.0 - PROB_EPS)


def elbo_loss(x, x_hat, mu, logvar) -> LossBreakdown:
    """Negative ELBO averaged over the batch.

    reconstruction = sum_i -[x_i ln x̂_i + (1 - x_i) ln(1 - x̂_i)]
    kl             = 1/2 sum_j (mu_j^2 + exp(logvar_j) - 1 - logvar_j)
    """
    x, x_hat, mu, logvar = (as_tensor(t) for t in (x, x_hat, mu, logvar))
    if x.shape != x_hat.shape:
        raise DimensionError(f"x {x.shape} and x_hat {x_hat.shape} differ")
    if mu.shape != logvar.shape:
        raise DimensionError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    batch = x.shape[0] if x.ndim > 1 else 1
    p = clip(x_hat, PROB_EPS, 1.0 - PROB_EPS)
    nll = -(x * log(p) + (1.0 - x) * log(1.0 - p))
    rec = nll.sum() * (1.0 / batch)
    kl_terms = mu * mu + exp(logvar) - 1.0 - logvar
    kl = kl_terms.sum() * (0.5 / batch)
    total = rec + kl
    return LossBreakdown(total.item(), rec.item(), kl.item(), total)


def kl_divergence(mu, logvar) -> np.ndarray:
    """Per-sample closed-form KL(N(mu, exp(logvar)) || N(0, I)) as a plain array."""
    mu, logvar = np.asarray(mu, dtype=np.float64), np.asarray(logvar, dtype=np.float64)
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=-1)


def train_class_vae(images, config: VaeConfig, rng: np.random.Generator,
                    class_label: int = 0) -> tuple[VaeModel, list[float]]:
    """Train one VAE on the images of a single class.

    ``images`` has shape (n, H, W, C) or (n, H, W) with values in [0, 1].
    Returns the model and the mean total loss of every epoch. The rng drives
    initialization, per-epoch shuffling, and the reparameterization noise.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[..., None]
    if images.shape[0] < 2:
        raise InsufficientDataError(f"class {class_label} has {images.shape[0]} images; need >= 2")
    n = images.shape[0]
    flat = images.reshape(n, -1)
    model = build_vae(class_label, images.shape[1:], config.latent_dim, config.hidden, rng)
    params = model.parameters()
    opt = AdamState(lr=config.lr)
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            batch = flat[order[start : start + config.batch_size]]
            sample = sample_latent(model, batch, rng)
            loss = elbo_loss(batch, decode(model, sample.z), sample.mu, sample.logvar)
            grads = backward(loss.graph, wrt=params)
            adam_step(params, [grads[p].data for p in params], opt)
            running += loss.total * batch.shape[0]
        history.append(running / n)
        if epoch % 50 == 0 or epoch == config.epochs - 1:
            log_.debug("vae class %d epoch %d loss %.4f", class_label, epoch, history[-1])
    return model, history


def save_checkpoint(model: VaeModel, path) -> None:
    meta = {
        "class_label": model.class_label,
        "latent_dim": model.latent_dim,
        "image_shape": list(model.image_shape),
        "hidden": [layer.out_dim for layer in model.encoder],
    }
    tensors = [(name, t.data) for name, t in model.named_parameters()]
    checkpoint.write_container(path, checkpoint.VAE_FORMAT, meta, tensors)


def load_checkpoint(path) -> VaeModel:
    meta, tensors = checkpoint.read_container(path, checkpoint.VAE_FORMAT)
    try:
        hidden = meta["hidden"]

        def dense(prefix: str) -> DenseLayer:
            return DenseLayer(Tensor(tensors[f"{prefix}.weight"], requires_grad=True),
                              Tensor(tensors[f"{prefix}.bias"], requires_grad=True))

        return VaeModel(
            class_label=int(meta["class_label"]),
            latent_dim=int(meta["latent_dim"]),
            image_shape=tuple(meta["image_shape"]),
            encoder=[dense(f"encoder.{i}") for i in range(len(hidden))],
            mu_head=dense("mu_head"),
            logvar_head=dense("logvar_head"),
            decoder=[dense(f"decoder.{i}") for i in range(len(hidden) + 1)],
        )
    except (KeyError, TypeError, DimensionError) as exc:
        raise ParseError(f"inconsistent checkpoint metadata: {exc}", 0) from None
