"""Dense and convolutional layers, Glorot initialization, and Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, as_tensor, conv2d, linear


def init_params(shape, rng: np.random.Generator) -> Tensor:
    """Glorot-uniform weights for rank >= 2 shapes; zeros for rank-1 biases.

    For convolution kernels (out, in, kh, kw) the receptive field counts
    toward both fans.
    """
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise DimensionError(f"invalid parameter shape {shape}")
    if len(shape) == 1:
        return Tensor(np.zeros(shape), requires_grad=True)
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_out, fan_in = shape[0] * receptive, shape[1] * receptive
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


@dataclass
class DenseLayer:
    weight: Tensor  # out x in
    bias: Tensor  # out

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"inconsistent dense shapes {self.weight.shape} / {self.bias.shape}")

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "DenseLayer":
        return cls(init_params((out_dim, in_dim), rng), init_params((out_dim,), rng))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x) -> Tensor:
        return dense_forward(self, x)


def dense_forward(layer: DenseLayer, x) -> Tensor:
    """``x @ W.T + b`` for a batch x of shape (batch, in)."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise DimensionError(f"dense layer expects (batch, {layer.in_dim}), got {x.shape}")
    return linear(x, layer.weight, layer.bias)


@dataclass
class Conv2dLayer:
    kernels: Tensor  # out_ch x in_ch x kh x kw
    bias: Tensor
    stride: int = 1

    def __post_init__(self):
        k = self.kernels.shape
        if len(k) != 4 or k[2] % 2 == 0 or k[3] % 2 == 0:
            raise DimensionError(f"kernels must be OIHW with odd sizes, got {k}")
        if self.bias.shape != (k[0],):
            raise DimensionError(f"bias shape {self.bias.shape} does not match {k[0]} channels")
        if self.stride not in (1, 2):
            raise DimensionError(f"stride must be 1 or 2, got {self.stride}")

    @classmethod
    def create(cls, in_ch: int, out_ch: int, rng: np.random.Generator,
               kernel_size: int = 3, stride: int = 1) -> "Conv2dLayer":
        kernels = init_params((out_ch, in_ch, kernel_size, kernel_size), rng)
        return cls(kernels, init_params((out_ch,), rng), stride)

    def parameters(self) -> list[Tensor]:
        return [self.kernels, self.bias]

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return -(-h // self.stride), -(-w // self.stride)

    def __call__(self, x) -> Tensor:
        return conv2d_forward(self, x)


def conv2d_forward(layer: Conv2dLayer, x) -> Tensor:
    return conv2d(as_tensor(x), layer.kernels, layer.bias, layer.stride)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied to the parameter leaves in place.

    Returns ``(params, state)`` for convenience.
    """
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise DimensionError("optimizer state does not match parameter list")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise DimensionError(f"shape mismatch: param {p.shape}, grad {np.shape(g)}, moment {m.shape}")
    state.t += 1
    step = state.lr / (1.0 - state.beta1 ** state.t)
    inv_bc2_sqrt = 1.0 / np.sqrt(1.0 - state.beta2 ** state.t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        tmp = np.multiply(g, g)
        tmp *= 1.0 - state.beta2
        v *= state.beta2
        v += tmp
        # p -= lr * m_hat / (sqrt(v_hat) + eps), with temporaries reused
        np.sqrt(v, out=tmp)
        tmp *= inv_bc2_sqrt
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= step
        p.data -= tmp
    return params, state
