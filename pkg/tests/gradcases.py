"""Gradient-check cases: each builder maps an rng to (f, leaves).

``f(leaves)`` returns a scalar; outputs are contracted with a fixed random
weight tensor so the upstream gradient is not all ones.
"""

import numpy as np

from latentaug import classifier as clf
from latentaug import tensor as T
from latentaug import vae
from latentaug.layers import Conv2dLayer, DenseLayer, conv2d_forward, dense_forward
from latentaug.tensor import Tensor


def _leaf(rng, shape, low=-2.0, high=2.0, avoid_zero=False):
    x = rng.uniform(low, high, size=shape)
    if avoid_zero:
        x = np.where(np.abs(x) < 0.05, 0.3 * np.sign(x) + (x == 0) * 0.3, x)
    return Tensor(x, requires_grad=True)


def _contract(out, rng):
    w = Tensor(rng.standard_normal(out.shape))
    return (out * w).sum()


def _shape(rng, rank=2):
    return tuple(int(s) for s in rng.integers(1, 5, size=rank))


def unary(op, **leaf_kw):
    def build(rng):
        x = _leaf(rng, _shape(rng), **leaf_kw)
        w = rng.standard_normal(x.shape)
        return (lambda xs: (op(xs[0]) * Tensor(w)).sum()), [x]
    return build


def binary(op, bias=False):
    def build(rng):
        shape = _shape(rng)
        a = _leaf(rng, shape)
        b = _leaf(rng, (shape[-1],) if bias else shape)
        w = rng.standard_normal(shape)
        return (lambda xs: (op(xs[0], xs[1]) * Tensor(w)).sum()), [a, b]
    return build


def matmul_case(rng):
    m, k, n = (int(s) for s in rng.integers(1, 5, size=3))
    a, b = _leaf(rng, (m, k)), _leaf(rng, (k, n))
    w = rng.standard_normal((m, n))
    return (lambda xs: (T.matmul(xs[0], xs[1]) * Tensor(w)).sum()), [a, b]


def transpose_reshape_case(rng):
    a = _leaf(rng, (2, 6))
    w = rng.standard_normal((3, 4))
    return (lambda xs: (T.reshape(T.transpose(xs[0]), (3, 4)) * Tensor(w)).sum()), [a]


def reduce_case(kind):
    def build(rng):
        a = _leaf(rng, _shape(rng, 3))
        axis = int(rng.integers(-1, 3))
        axis = None if axis == -1 else axis
        out = T.reduce(kind, a, axis)
        w = rng.standard_normal(out.shape)
        return (lambda xs: (T.reduce(kind, xs[0], axis) * Tensor(w)).sum()), [a]
    return build


def log_softmax_case(rng):
    a = _leaf(rng, _shape(rng))
    w = rng.standard_normal(a.shape)
    return (lambda xs: (T.log_softmax(xs[0]) * Tensor(w)).sum()), [a]


def dense_case(rng):
    n, i, o = (int(s) for s in rng.integers(1, 6, size=3))
    layer = DenseLayer.create(i, o, rng)
    layer.bias.data[:] = rng.standard_normal(o)
    x = _leaf(rng, (n, i))
    w = rng.standard_normal((n, o))
    return (lambda xs: (dense_forward(layer, xs[0]) * Tensor(w)).sum()), [x, layer.weight, layer.bias]


def conv_case(rng):
    n = int(rng.integers(1, 3))
    c, o = (int(s) for s in rng.integers(1, 4, size=2))
    h, w_ = (int(s) for s in rng.integers(3, 7, size=2))
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    layer = Conv2dLayer.create(c, o, rng, kernel_size=k, stride=stride)
    layer.bias.data[:] = rng.standard_normal(o)
    x = _leaf(rng, (n, c, h, w_))
    out_shape = conv2d_forward(layer, x).shape
    wt = rng.standard_normal(out_shape)
    return (lambda xs: (conv2d_forward(layer, xs[0]) * Tensor(wt)).sum()), [x, layer.kernels, layer.bias]


def elbo_case(rng):
    """Full negative ELBO of a small VAE on a 2-image batch, w.r.t. every parameter."""
    side = int(rng.integers(2, 4))
    latent = int(rng.integers(1, 4))
    hidden = tuple(int(s) for s in rng.integers(2, 6, size=2))
    model = vae.build_vae(0, (side, side, 1), latent, hidden, rng)
    for p in model.parameters():
        if p.ndim == 1:
            p.data[:] = 0.1 * rng.standard_normal(p.shape)
    x = rng.uniform(0.05, 0.95, size=(2, side * side))
    eps = rng.standard_normal((2, latent))

    def f(_):
        mu, logvar = vae.encode(model, x)
        z = vae.reparameterize(mu, logvar, eps)
        return vae.elbo_loss(x, vae.decode(model, z), mu, logvar).graph

    return f, model.parameters()


def cross_entropy_case(rng):
    n = 4
    z = _leaf(rng, (n, 3))
    labels = rng.integers(0, 3, size=n)
    return (lambda xs: clf.cross_entropy(xs[0], labels)), [z]


def classifier_case(arch):
    def build(rng):
        model = clf.build_classifier(arch, (6, 6, 1), 3, rng, conv_channels=(2, 3), mlp_hidden=5)
        for p in model.parameters():
            if p.ndim == 1:
                p.data[:] = 0.1 * rng.standard_normal(p.shape)
        images = rng.uniform(0, 1, size=(4, 6, 6, 1))
        labels = rng.integers(0, 3, size=4)
        return (lambda _: clf.cross_entropy(clf.logits(model, images), labels)), model.parameters()
    return build


CASES = {
    "add": binary(T.add),
    "add_bias": binary(T.add, bias=True),
    "sub": binary(T.sub),
    "sub_bias": binary(T.sub, bias=True),
    "mul": binary(T.mul),
    "mul_bias": binary(T.mul, bias=True),
    "neg": unary(T.neg),
    "exp": unary(T.exp),
    "log": unary(T.log, low=0.2, high=3.0),
    "sigmoid": unary(T.sigmoid),
    "relu": unary(T.relu, avoid_zero=True),
    "square": unary(T.square),
    "clip": unary(lambda t: T.clip(t, -1.0, 1.0), avoid_zero=False),
    "matmul": matmul_case,
    "transpose_reshape": transpose_reshape_case,
    "sum": reduce_case("sum"),
    "mean": reduce_case("mean"),
    "log_softmax": log_softmax_case,
    "dense_layer": dense_case,
    "conv2d_layer": conv_case,
    "elbo_full_vae": elbo_case,
    "cross_entropy": cross_entropy_case,
    "classifier_cnn_ce": classifier_case("small-cnn"),
    "classifier_mlp_ce": classifier_case("mlp"),
}


def max_error(name: str, n_configs: int = 20, seed: int = 0) -> float:
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    worst = 0.0
    for _ in range(n_configs):
        f, leaves = CASES[name](rng)
        worst = max(worst, T.grad_check(f, leaves))
    return worst
