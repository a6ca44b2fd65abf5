"""Dense float64 tensors with a define-by-run reverse-mode tape.

A ``Tensor`` wraps a numpy array. Operations never mutate their inputs; when
any input is grad-tracked the result remembers its parents and a closure that
maps the upstream gradient to one gradient per parent. ``Tape.build`` orders
that graph topologically and ``backward`` walks it in reverse.

Broadcasting is deliberately limited to a bias vector over the last axis
(plus Python scalars, which are expanded to the other operand's shape).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor data must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple["Tensor", ...],
                backward: BackwardFn, op: str) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise DomainError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    # -- operators --------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_like(other, self), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_like(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis: int | None = None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return reduce_mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _like(value, ref: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return Tensor(np.full(ref.shape, float(arr)))
    return Tensor(arr)


def _binary_operands(a, b) -> tuple[Tensor, Tensor, bool]:
    """Coerce operands; returns (a, b, b_is_bias_vector)."""
    if not isinstance(a, Tensor):
        a = _like(a, as_tensor(b))
    b = _like(b, a)
    if a.shape == b.shape:
        return a, b, False
    if a.ndim >= 2 and b.ndim == 1 and b.shape[0] == a.shape[-1]:
        return a, b, True
    raise DimensionError(f"cannot combine shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, bias: bool) -> np.ndarray:
    if not bias:
        return grad
    return grad.reshape(-1, grad.shape[-1]).sum(axis=0)


# -- elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b, bias = _binary_operands(a, b)
    return Tensor._result(a.data + b.data, (a, b),
                          lambda g: (g, _unbroadcast(g, bias)), "add")


def sub(a, b) -> Tensor:
    a, b, bias = _binary_operands(a, b)
    return Tensor._result(a.data - b.data, (a, b),
                          lambda g: (g, -_unbroadcast(g, bias)), "sub")


def mul(a, b) -> Tensor:
    a, b, bias = _binary_operands(a, b)
    av, bv = a.data, b.data
    return Tensor._result(av * bv, (a, b),
                          lambda g: (g * bv, _unbroadcast(g * av, bias)), "mul")


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input")
    av = a.data
    return Tensor._result(np.log(av), (a,), lambda g: (g / av,), "log")


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so neither branch overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient 0 at exactly 0
    return Tensor._result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def square(a: Tensor) -> Tensor:
    av = a.data
    return Tensor._result(av * av, (a,), lambda g: (2.0 * av * g,), "square")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input was inside."""
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


_UNARY = {"neg": neg, "exp": exp, "log": log, "sigmoid": sigmoid, "relu": relu, "square": square}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name."""
    if op_kind in _BINARY:
        if b is None:
            raise ContractError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, b)
    if op_kind in _UNARY:
        if b is not None:
            raise ContractError(f"{op_kind} takes one operand")
        return _UNARY[op_kind](as_tensor(a))
    raise ContractError(f"unknown elementwise op {op_kind!r}")


# -- linear algebra and shape ---------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    av, bv = a.data, b.data
    return Tensor._result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def linear(x, weight, bias) -> Tensor:
    """Fused ``x @ weight.T + bias`` for x (batch, in), weight (out, in)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xv, wv = x.data, weight.data
    return Tensor._result(xv @ wv.T + bias.data, (x, weight, bias),
                          lambda g: (g @ wv, g.T @ xv, g.sum(axis=0)), "linear")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a rank-2 tensor, got {a.shape}")
    return Tensor._result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape).copy()
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return Tensor._result(out, (a,), lambda g: (g.reshape(src),), "reshape")


def _check_axis(a: Tensor, axis: int | None) -> int | None:
    if axis is None:
        return None
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    return axis % a.ndim


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    axis = _check_axis(a, axis)
    src = a.shape
    if axis is None:
        return Tensor._result(np.array(a.data.sum()), (a,),
                              lambda g: (np.broadcast_to(g, src).copy(),), "sum")
    return Tensor._result(a.data.sum(axis=axis), (a,),
                          lambda g: (np.broadcast_to(np.expand_dims(g, axis), src).copy(),),
                          "sum")


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    axis = _check_axis(a, axis)
    n = a.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis), 1.0 / n)


def reduce(op_kind: str, a: Tensor, axis: int | None = None) -> Tensor:
    if op_kind == "sum":
        return reduce_sum(a, axis)
    if op_kind == "mean":
        return reduce_mean(a, axis)
    raise ContractError(f"unknown reduction {op_kind!r}")


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)
    return Tensor._result(out, (a,),
                          lambda g: (g - probs * g.sum(axis=-1, keepdims=True),),
                          "log_softmax")


# -- convolution ------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (N, C, Ho, Wo, kh, kw) -> (N*Ho*Wo, C*kh*kw)
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Zero-padded ("same") cross-correlation of NCHW input with OIHW kernels."""
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"conv2d needs NCHW input and OIHW kernels, got {x.shape}, {kernels.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = kernels.shape
    if ci != c:
        raise DimensionError(f"input has {c} channels, kernels expect {ci}")
    if bias.shape != (o,):
        raise DimensionError(f"bias shape {bias.shape} does not match {o} output channels")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError("kernel sizes must be odd")
    if h < kh or w < kw:
        raise DimensionError(f"image {h}x{w} smaller than kernel {kh}x{kw}")
    if stride not in (1, 2):
        raise ContractError(f"stride must be 1 or 2, got {stride}")
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    ho, wo = -(-h // stride), -(-w // stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = kernels.data.reshape(o, -1)
    out = (cols @ wmat.T + bias.data).reshape(n, ho, wo, o).transpose(0, 3, 1, 2).copy()

    def backward(g: np.ndarray):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        d_kernels = (g2.T @ cols).reshape(kernels.shape)
        d_bias = g2.sum(axis=0)
        dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        return dxp[:, :, ph : ph + h, pw : pw + w], d_kernels, d_bias

    return Tensor._result(out, (x, kernels, bias), backward, "conv2d")


# -- reverse pass ------------------------------------------------------------------

class Tape:
    """Topologically ordered record of the graph that produced ``loss``."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def build(cls, loss: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    @property
    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, Tensor]:
    """Propagate d(loss)/d(node) to every grad-tracked leaf.

    Returns a map leaf -> gradient tensor and also stores the raw array in
    ``leaf.grad``. Leaves listed in ``wrt`` that the loss does not depend on
    receive zero gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape.build(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = np.asarray(pg, dtype=np.float64)
    leaves = tape.leaves if wrt is None else list(wrt)
    result: dict[Tensor, Tensor] = {}
    for leaf in leaves:
        g = grads.get(id(leaf))
        g = np.zeros_like(leaf.data) if g is None else np.asarray(g).reshape(leaf.shape)
        leaf.grad = g
        result[leaf] = Tensor._result(g, (), None, "grad")
    return result


def grad_check(f: Callable, x, h: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    ``x`` is a Tensor or a sequence of Tensors; ``f(x)`` must return a scalar.
    Components are perturbed in place and restored, so closures over ``x``
    (for example a model's parameter tensors) see the perturbation.
    """
    if h <= 0:
        raise ContractError("step h must be positive")
    leaves = [x] if isinstance(x, Tensor) else list(x)
    saved_flags = [leaf.requires_grad for leaf in leaves]
    for leaf in leaves:
        leaf.requires_grad = True
    try:
        out = as_tensor(f(x))
        if out.size != 1:
            raise ContractError(f"f must return a scalar, got shape {out.shape}")
        analytic = backward(out, wrt=leaves)

        def value() -> float:
            return as_tensor(f(x)).item()

        worst = 0.0
        for leaf in leaves:
            flat = leaf.data.reshape(-1)
            assert np.shares_memory(flat, leaf.data)
            ga = analytic[leaf].data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = value()
                flat[i] = orig - h
                fm = value()
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * h)
                worst = max(worst, abs(ga[i] - numeric) / max(1.0, abs(ga[i])))
        return worst
    finally:
        for leaf, flag in zip(leaves, saved_flags):
            leaf.requires_grad = flag
