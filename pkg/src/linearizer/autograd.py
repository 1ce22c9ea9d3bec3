"""Tape-style reverse-mode differentiation over float64 numpy arrays.

Every operation builds a fresh node; ``backward`` walks the tape in reverse
topological order. Values are checked for finiteness as they are produced.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NumericError",
    "ShapeError",
    "no_grad",
    "is_grad_enabled",
    "tensor",
    "as_tensor",
    "matmul",
    "concat",
    "ste_round",
    "householder_product",
    "PRIMITIVES",
]

_GRAD_ENABLED = True

# name -> callable building the op from Tensors; used by the gradient test sweep
PRIMITIVES: dict[str, Callable[..., "Tensor"]] = {}


class NumericError(FloatingPointError):
    """A NaN or Inf appeared where a finite value was required."""


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a single reduction is much cheaper than isfinite().all() and catches nan/inf
    if arr.size and not math.isfinite(float(np.add.reduce(arr, axis=None))):
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite value produced by '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    # construction ---------------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str,
              backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> "Tensor":
        """Create a node; ``backward`` maps out-grad to one grad per parent."""
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._make(self.data, (), "detach", lambda g: ())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __len__(self) -> int:
        return len(self.data)

    # reverse pass ---------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        # per-call accumulation buffers keep repeated backward() calls independent
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        for node in order:
            if node._backward is None and node.grad is not None:
                _check_finite(node.grad, "backward")

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def softplus(self):
        return softplus(self)

    def abs(self):
        return absolute(self)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _primitive(name: str):
    def deco(fn):
        PRIMITIVES[name] = fn
        return fn
    return deco


# elementwise binary ---------------------------------------------------------

@_primitive("add")
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b), "add",
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


@_primitive("sub")
def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b), "sub",
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


@_primitive("mul")
def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return Tensor._make(ad * bd, (a, b), "mul",
                        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


@_primitive("div")
def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return Tensor._make(out, (a, b), "div",
                        lambda g: (_unbroadcast(g / bd, ad.shape),
                                   _unbroadcast(-g * out / bd, bd.shape)))


# elementwise unary ----------------------------------------------------------

@_primitive("neg")
def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), "neg", lambda g: (-g,))


@_primitive("pow")
def power(a: Tensor, p: float = 2.0) -> Tensor:
    ad = a.data
    return Tensor._make(ad ** p, (a,), "pow", lambda g: (g * p * ad ** (p - 1),))


@_primitive("exp")
def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), "exp", lambda g: (g * out,))


@_primitive("log")
def log(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._make(np.log(ad), (a,), "log", lambda g: (g / ad,))


@_primitive("tanh")
def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@_primitive("sigmoid")
def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return Tensor._make(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


@_primitive("softplus")
def softplus(a: Tensor) -> Tensor:
    ad = a.data
    # s = sigmoid(-|x|) via tanh (cheaper than exp here); softplus = max(x, 0) - log(1 - s)
    s = 0.5 - 0.5 * np.tanh(0.5 * np.abs(ad))
    out = np.maximum(ad, 0.0) - np.log1p(-s)

    def back(g):
        return (g * np.where(ad >= 0.0, 1.0 - s, s),)

    return Tensor._make(out, (a,), "softplus", back)


@_primitive("sin")
def sin(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._make(np.sin(ad), (a,), "sin", lambda g: (g * np.cos(ad),))


@_primitive("cos")
def cos(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._make(np.cos(ad), (a,), "cos", lambda g: (-g * np.sin(ad),))


@_primitive("sinh")
def sinh(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._make(np.sinh(ad), (a,), "sinh", lambda g: (g * np.cosh(ad),))


@_primitive("arcsinh")
def arcsinh(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._make(np.arcsinh(ad), (a,), "arcsinh", lambda g: (g / np.sqrt(1.0 + ad * ad),))


@_primitive("cbrt")
def cbrt(a: Tensor) -> Tensor:
    out = np.cbrt(a.data)
    # derivative is unbounded at 0; callers keep away from it
    return Tensor._make(out, (a,), "cbrt", lambda g: (g / (3.0 * out * out),))


@_primitive("abs")
def absolute(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._make(np.abs(ad), (a,), "abs", lambda g: (g * np.sign(ad),))


def ste_round(p: Tensor) -> Tensor:
    """Forward ``1`` where p > 0.5 else ``0`` (ties go down); backward is identity."""
    out = (p.data > 0.5).astype(np.float64)
    return Tensor._make(out, (p,), "ste_round", lambda g: (g,))


# linear algebra / shape ----------------------------------------------------

@_primitive("matmul")
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {ad.shape} @ {bd.shape}")

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._make(ad @ bd, (a, b), "matmul", back)


@_primitive("sum")
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum", back)


@_primitive("mean")
def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return Tensor._make(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), "mean", back)


@_primitive("reshape")
def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(old),))


@_primitive("transpose")
def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2) if a.ndim >= 2 else (0,)
    inv = tuple(np.argsort(axes))
    return Tensor._make(np.transpose(a.data, axes), (a,), "transpose",
                        lambda g: (np.transpose(g, inv),))


@_primitive("getitem")
def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    basic = all(isinstance(i, (slice, int, type(Ellipsis), type(None)))
                for i in (idx if isinstance(idx, tuple) else (idx,)))

    def back(g):
        full = np.zeros(shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(a.data[idx], (a,), "getitem", back)


@_primitive("concat")
def concat(parts: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._make(np.concatenate([p.data for p in parts], axis=axis), parts, "concat", back)


def _reflections(w: np.ndarray) -> list[np.ndarray]:
    n = w.shape[1]
    eye = np.eye(n)
    return [eye - 2.0 * np.outer(r, r) / (r @ r) for r in w]


@_primitive("householder")
def householder_product(w: Tensor) -> Tensor:
    """Orthogonal matrix ``H_1 H_2 ... H_k`` from the rows of ``w`` (k x n)."""
    wd = w.data
    hs = _reflections(wd)
    n = wd.shape[1]
    # prefix[i] = H_1..H_i, suffix[i] = H_{i+1}..H_k
    prefix = [np.eye(n)]
    for h in hs:
        prefix.append(prefix[-1] @ h)
    suffix = [np.eye(n)]
    for h in reversed(hs):
        suffix.append(h @ suffix[-1])
    suffix.reverse()

    def back(g):
        gw = np.empty_like(wd)
        for i, r in enumerate(wd):
            gi = prefix[i].T @ g @ suffix[i + 1].T
            s = r @ r
            gw[i] = -2.0 * ((gi + gi.T) @ r / s - 2.0 * (r @ gi @ r) * r / (s * s))
        return (gw,)

    return Tensor._make(prefix[-1], (w,), "householder", back)


def parameters_of(obj) -> list[Tensor]:
    """Collect trainable leaves from an object exposing ``named_parameters``."""
    return [t for _, t in obj.named_parameters()]
