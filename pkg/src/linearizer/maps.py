"""Exactly invertible maps g: R^n -> R^n.

All maps act on row-batches of shape (B, n); 1-D inputs are treated as a
single row and returned 1-D.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import autograd as ad
from .autograd import Tensor, ShapeError, as_tensor
from .nn import MLP, Module
from .rng import RngStream

LOG_SCALE_BOUND = 2.0


def _rows(v) -> tuple[Tensor, bool]:
    t = as_tensor(v)
    if t.ndim == 1:
        return t.reshape(1, -1), True
    if t.ndim != 2:
        raise ShapeError(f"expected a vector or a (batch, n) array, got shape {t.shape}")
    return t, False


class InvertibleMap(Module):
    kind = "abstract"

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    # subclasses implement these on (B, n) tensors
    def _forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def _inverse(self, y: Tensor) -> Tensor:
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}

    def _apply(self, v, fn) -> Tensor:
        x, squeeze = _rows(v)
        if x.shape[1] != self.dim:
            raise ShapeError(f"{self.kind} expects dimension {self.dim}, got {x.shape[1]}")
        out = fn(x)
        return out.reshape(-1) if squeeze else out

    def forward(self, v) -> Tensor:
        return self._apply(v, self._forward)

    def inverse(self, v) -> Tensor:
        return self._apply(v, self._inverse)

    __call__ = forward

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim})"


class AnalyticBijection(InvertibleMap):
    """Closed-form bijections used as oracles: identity, cube, scaled-sinh, affine."""

    kind = "analytic"
    NAMES = ("identity", "cube", "scaled-sinh", "affine")

    def __init__(self, name: str, dim: int, *, amplitude: float = 0.5, width: float = 1.0,
                 rng: RngStream | None = None):
        super().__init__(dim)
        if name not in self.NAMES:
            raise ValueError(f"unknown analytic bijection {name!r}; choose from {self.NAMES}")
        self.name = name
        self.amplitude = amplitude
        self.width = width
        if name == "affine":
            rng = rng or RngStream(0)
            # orthogonal times a positive diagonal in [0.5, 2]: well conditioned by construction
            q, _ = np.linalg.qr(rng.normal((dim, dim)))
            d = np.exp(rng.uniform(dim, math.log(0.5), math.log(2.0)))
            self.matrix = self.add_param("matrix", q * d)
            self.offset = self.add_param("offset", rng.normal(dim, 0.5))

    def config(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "name": self.name,
                "amplitude": self.amplitude, "width": self.width}

    def _forward(self, x):
        if self.name == "identity":
            return x
        if self.name == "cube":
            return x * x * x
        if self.name == "scaled-sinh":
            return self.amplitude * ad.sinh(x / self.width)
        return x @ self.matrix.T + self.offset

    def _inverse(self, y):
        if self.name == "identity":
            return y
        if self.name == "cube":
            return ad.cbrt(y)
        if self.name == "scaled-sinh":
            return self.width * ad.arcsinh(y / self.amplitude)
        inv_t = np.linalg.inv(self.matrix.data).T
        return (y - self.offset.data) @ inv_t

    def __repr__(self) -> str:
        return f"AnalyticBijection({self.name!r}, dim={self.dim})"


def identity_map(dim: int) -> AnalyticBijection:
    return AnalyticBijection("identity", dim)


class ActNorm(InvertibleMap):
    """Per-coordinate affine map ``x * exp(log_scale) + bias``; starts as the identity."""

    kind = "actnorm"

    def __init__(self, dim: int):
        super().__init__(dim)
        self.log_scale = self.add_param("log_scale", np.zeros(dim))
        self.bias = self.add_param("bias", np.zeros(dim))

    def _forward(self, x):
        return x * ad.exp(self.log_scale) + self.bias

    def _inverse(self, y):
        return (y - self.bias) * ad.exp(-self.log_scale)


class _Coupling(InvertibleMap):
    def __init__(self, dim: int, swap: bool, width: int, rng: RngStream, out_scale: float, outputs: int):
        if dim < 2:
            raise ValueError("coupling layers need dim >= 2")
        super().__init__(dim)
        self.swap = swap
        self.width = width
        self.out_scale = out_scale
        self.split = math.ceil(dim / 2)
        n_cond = dim - self.split if swap else self.split
        n_tr = dim - n_cond
        self.n_tr = n_tr
        self.net = self.add_child("net", MLP([n_cond, width, width, outputs * n_tr], rng, out_scale))

    def config(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "swap": self.swap,
                "width": self.width, "out_scale": self.out_scale}

    def _parts(self, x: Tensor) -> tuple[Tensor, Tensor]:
        a, b = x[:, : self.split], x[:, self.split :]
        # (conditioning, transformed)
        return (b, a) if self.swap else (a, b)

    def _join(self, cond: Tensor, tr: Tensor) -> Tensor:
        return ad.concat([tr, cond] if self.swap else [cond, tr], axis=1)


class AffineCoupling(_Coupling):
    """Transforms one half by ``exp(log_s) * x + shift`` conditioned on the other.

    ``log_s`` is bounded to [-2, 2] with a scaled tanh.
    """

    kind = "affine-coupling"

    def __init__(self, dim: int, swap: bool = False, width: int = 64,
                 rng: RngStream | None = None, out_scale: float = 0.1):
        super().__init__(dim, swap, width, rng or RngStream(0), out_scale, 2)

    def _scale_shift(self, cond: Tensor) -> tuple[Tensor, Tensor]:
        h = self.net(cond)
        shift = h[:, : self.n_tr]
        log_s = LOG_SCALE_BOUND * ad.tanh(h[:, self.n_tr :] / LOG_SCALE_BOUND)
        return log_s, shift

    def _forward(self, x):
        cond, tr = self._parts(x)
        log_s, shift = self._scale_shift(cond)
        return self._join(cond, tr * ad.exp(log_s) + shift)

    def _inverse(self, y):
        cond, tr = self._parts(y)
        log_s, shift = self._scale_shift(cond)
        return self._join(cond, (tr - shift) * ad.exp(-log_s))


class AdditiveCoupling(_Coupling):
    kind = "additive-coupling"

    def __init__(self, dim: int, swap: bool = False, width: int = 64,
                 rng: RngStream | None = None, out_scale: float = 0.1):
        super().__init__(dim, swap, width, rng or RngStream(0), out_scale, 1)

    def _forward(self, x):
        cond, tr = self._parts(x)
        return self._join(cond, tr + self.net(cond))

    def _inverse(self, y):
        cond, tr = self._parts(y)
        return self._join(cond, tr - self.net(cond))


class HouseholderMixing(InvertibleMap):
    """Learned orthogonal mixer: a product of ``k`` Householder reflections."""

    kind = "householder"

    def __init__(self, dim: int, reflections: int | None = None, rng: RngStream | None = None):
        super().__init__(dim)
        self.reflections = dim if reflections is None else reflections
        rng = rng or RngStream(0)
        self.vectors = self.add_param("vectors", rng.normal((self.reflections, dim)))

    def config(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "reflections": self.reflections}

    def matrix(self) -> Tensor:
        return ad.householder_product(self.vectors)

    def _forward(self, x):
        return x @ self.matrix().T

    def _inverse(self, y):
        return y @ self.matrix()


class Composition(InvertibleMap):
    """``forward = maps[-1] o ... o maps[0]``; the inverse runs in reverse order."""

    kind = "composition"

    def __init__(self, maps: Sequence[InvertibleMap]):
        maps = list(maps)
        if not maps:
            raise ValueError("composition of zero maps")
        dim = maps[0].dim
        for m in maps:
            if m.dim != dim:
                raise ShapeError(f"cannot compose maps of dimension {dim} and {m.dim}")
        super().__init__(dim)
        self.maps = maps
        for i, m in enumerate(maps):
            self.add_child(str(i), m)

    def config(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "maps": [m.config() for m in self.maps]}

    def _forward(self, x):
        for m in self.maps:
            x = m._forward(x)
        return x

    def _inverse(self, y):
        for m in reversed(self.maps):
            y = m._inverse(y)
        return y

    def __repr__(self) -> str:
        return f"Composition({len(self.maps)} maps, dim={self.dim})"


class _Inverted(InvertibleMap):
    """View of a map with forward and inverse exchanged (shares parameters)."""

    kind = "inverted"

    def __init__(self, base: InvertibleMap):
        super().__init__(base.dim)
        self.base = base
        self.add_child("base", base)

    def config(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "base": self.base.config()}

    def _forward(self, x):
        return self.base._inverse(x)

    def _inverse(self, y):
        return self.base._forward(y)


def inverted(g: InvertibleMap) -> InvertibleMap:
    return _Inverted(g)


def compose(g1: InvertibleMap, g2: InvertibleMap) -> Composition:
    """Map applying ``g1`` first, then ``g2``."""
    if g1.dim != g2.dim:
        raise ShapeError(f"cannot compose maps of dimension {g1.dim} and {g2.dim}")
    return Composition([g1, g2])


def coupling_stack(dim: int, blocks: int = 6, coupling: str = "affine", width: int = 64,
                   rng: RngStream | None = None, out_scale: float = 0.1,
                   actnorm: bool = True, mixing: bool = True) -> Composition:
    """``blocks`` x [ActNorm -> coupling(x1|x2) -> coupling(x2|y1) -> Householder mixer]."""
    rng = rng or RngStream(0)
    cls = {"affine": AffineCoupling, "additive": AdditiveCoupling}[coupling]
    maps: list[InvertibleMap] = []
    for _ in range(blocks):
        if actnorm:
            maps.append(ActNorm(dim))
        maps.append(cls(dim, swap=False, width=width, rng=rng, out_scale=out_scale))
        maps.append(cls(dim, swap=True, width=width, rng=rng, out_scale=out_scale))
        if mixing:
            maps.append(HouseholderMixing(dim, rng=rng))
    return Composition(maps)


def build_map(cfg: dict) -> InvertibleMap:
    """Rebuild a map skeleton from ``config()``; load parameters afterwards."""
    kind = cfg["kind"]
    dim = cfg["dim"]
    if kind == "analytic":
        return AnalyticBijection(cfg["name"], dim, amplitude=cfg["amplitude"], width=cfg["width"])
    if kind == "actnorm":
        return ActNorm(dim)
    if kind == "affine-coupling":
        return AffineCoupling(dim, cfg["swap"], cfg["width"], out_scale=cfg["out_scale"])
    if kind == "additive-coupling":
        return AdditiveCoupling(dim, cfg["swap"], cfg["width"], out_scale=cfg["out_scale"])
    if kind == "householder":
        return HouseholderMixing(dim, cfg["reflections"])
    if kind == "composition":
        return Composition([build_map(c) for c in cfg["maps"]])
    if kind == "inverted":
        return _Inverted(build_map(cfg["base"]))
    raise ValueError(f"unknown map kind {kind!r}")


def evaluate(g: InvertibleMap, v, inverse: bool = False) -> np.ndarray:
    """Gradient-free evaluation returning a numpy array."""
    with ad.no_grad():
        out = g.inverse(v) if inverse else g.forward(v)
    return out.data
