"""The Linearizer f(x) = g_y^-1(A g_x(x)) and the operators derived from its core."""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from . import autograd as ad
from .autograd import NumericError, ShapeError, Tensor
from .cores import DenseCore, LinearCore
from .induced import InducedSpace, residual, sample_ball
from .maps import InvertibleMap
from .rng import RngStream

PINV_RCOND = 1e-10


class ContractError(ValueError):
    """Raised when an operation's structural precondition does not hold."""


def same_map(a: InvertibleMap, b: InvertibleMap) -> bool:
    """Object identity, or identical architecture and parameters (checkpoint identity)."""
    if a is b:
        return True
    return a.config() == b.config() and a.fingerprint() == b.fingerprint()


class Linearizer:
    def __init__(self, g_x: InvertibleMap, g_y: InvertibleMap, core: LinearCore, t: float | None = None):
        if core.n != g_x.dim or core.m != g_y.dim:
            raise ShapeError(f"core {core.shape} does not fit g_x (dim {g_x.dim}) and g_y (dim {g_y.dim})")
        if core.time_dependent and t is None:
            raise ValueError("a time-dependent core needs t")
        self.g_x, self.g_y, self.core, self.t = g_x, g_y, core, t

    @property
    def shared_basis(self) -> bool:
        return self.g_x is self.g_y

    @property
    def m(self) -> int:
        return self.core.m

    @property
    def n(self) -> int:
        return self.core.n

    @property
    def X(self) -> InducedSpace:
        return InducedSpace(self.g_x)

    @property
    def Y(self) -> InducedSpace:
        return InducedSpace(self.g_y)

    def matrix(self) -> np.ndarray:
        return self.core.matrix(self.t)

    def forward_tensor(self, x) -> Tensor:
        """Differentiable application (used for training)."""
        z = self.g_x.forward(x)
        a = self.core.materialize(self.t)
        if z.ndim == 1:
            return self.g_y.inverse((a @ z.reshape(-1, 1)).reshape(-1))
        return self.g_y.inverse(z @ a.T)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n:
            raise ShapeError(f"input dimension {x.shape[-1]} != {self.n}")
        with ad.no_grad():
            z = self.g_x.forward(x).data
            y = self.g_y.inverse(z @ self.matrix().T).data
        if not np.isfinite(y).all():
            raise NumericError("non-finite Linearizer output")
        return y

    __call__ = apply

    def __repr__(self) -> str:
        return f"Linearizer({self.n} -> {self.m}, core={self.core!r}, shared={self.shared_basis})"


def _require_shared_square(f: Linearizer, what: str) -> None:
    if not f.shared_basis:
        raise ContractError(f"{what} needs a shared basis (g_x is g_y)")
    if f.m != f.n:
        raise ContractError(f"{what} needs a square core, got {f.m}x{f.n}")


def _dense(g_x, g_y, matrix: np.ndarray) -> Linearizer:
    return Linearizer(g_x, g_y, DenseCore.of(matrix))


def superposition_residual(f: Linearizer, x1, x2, a1, a2) -> float:
    """Worst data-side gap between f(a1.x1 + a2.x2) and a1.f(x1) + a2.f(x2) (induced ops)."""
    X, Y = f.X, f.Y
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    if np.ndim(x1) == 2:
        a1, a2 = np.reshape(a1, (-1, 1)), np.reshape(a2, (-1, 1))
    lhs = f(X.oplus(X.odot(a1, x1), X.odot(a2, x2)))
    rhs = Y.oplus(Y.odot(a1, f(x1)), Y.odot(a2, f(x2)))
    return residual(lhs, rhs)


def compose(f2: Linearizer, f1: Linearizer) -> Linearizer:
    """f2 o f1 as a single Linearizer with core A2 A1."""
    if not same_map(f2.g_x, f1.g_y):
        raise ContractError("composition needs f2's input map to be f1's output map")
    return _dense(f1.g_x, f2.g_y, f2.matrix() @ f1.matrix())


def power(f: Linearizer, n: int) -> Linearizer:
    _require_shared_square(f, "power")
    if int(n) != n or n < 1:
        raise ValueError("power needs a positive integer")
    a = f.matrix()
    out = a.copy()
    for _ in range(int(n) - 1):
        out = out @ a
    return _dense(f.g_x, f.g_y, out)


def transpose(f: Linearizer) -> Linearizer:
    """Adjoint under the induced inner products of g_x and g_y: g_x^-1(A^T g_y(y))."""
    return _dense(f.g_y, f.g_x, f.matrix().T.copy())


class LinearizerSVD(NamedTuple):
    sigmas: np.ndarray
    tilde_u: np.ndarray  # rows are g_y^-1(u_i)
    tilde_v: np.ndarray  # rows are g_x^-1(v_i)


def svd(f: Linearizer) -> LinearizerSVD:
    try:
        u, s, vt = np.linalg.svd(f.matrix())
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"core SVD failed: {exc}") from exc
    return LinearizerSVD(s, f.Y.from_latent(u.T), f.X.from_latent(vt))


def pinv(f: Linearizer) -> Linearizer:
    """Moore-Penrose pseudoinverse g_x^-1(A^+ g_y(y)); tiny singular values count as zero."""
    return _dense(f.g_y, f.g_x, np.linalg.pinv(f.matrix(), rcond=PINV_RCOND))


def gram(space: InducedSpace, vectors) -> np.ndarray:
    z = space.to_latent(vectors)
    return z @ z.T


def _adjoint_gap(P, space: InducedSpace, p1, p2) -> float:
    """Normalized |<P p1, p2> - <p1, P p2>| in the induced inner product."""
    z1, z2 = space.to_latent(p1), space.to_latent(p2)
    lhs = np.sum(space.to_latent(P(p1)) * z2, axis=-1)
    rhs = np.sum(z1 * space.to_latent(P(p2)), axis=-1)
    scale = np.linalg.norm(z1, axis=-1) * np.linalg.norm(z2, axis=-1)
    gap = np.abs(lhs - rhs) / np.maximum(scale, 1e-300)
    return float(gap.max(initial=0.0))


class PenroseResiduals(NamedTuple):
    f_fdag_f: float
    fdag_f_fdag: float
    f_fdag_selfadjoint: float
    fdag_f_selfadjoint: float

    def max(self) -> float:
        return max(self)


def penrose_residuals(f: Linearizer, f_dag: Linearizer, trials: int = 100,
                      rng: RngStream | None = None, radius: float = 3.0) -> PenroseResiduals:
    """Pointwise residuals of the four Penrose identities on random probes."""
    if f_dag.n != f.m or f_dag.m != f.n:
        raise ShapeError("pseudoinverse candidate has incompatible dimensions")
    rng = rng or RngStream(0)
    x = sample_ball(rng, trials, f.n, radius)
    y1 = sample_ball(rng, trials, f.m, radius)
    y2 = sample_ball(rng, trials, f.m, radius)
    x2 = sample_ball(rng, trials, f.n, radius)
    fx = f(x)
    r1 = residual(f(f_dag(fx)), fx)
    fdy = f_dag(y1)
    r2 = residual(f_dag(f(fdy)), fdy)
    r3 = _adjoint_gap(lambda y: f(f_dag(y)), f.Y, y1, y2)
    r4 = _adjoint_gap(lambda v: f_dag(f(v)), f.X, x, x2)
    return PenroseResiduals(r1, r2, r3, r4)


def adjoint_error(f: Linearizer, f_t: Linearizer, x, y) -> float:
    """Worst normalized gap of <f(x), y>_{g_y} = <x, f^T(y)>_{g_x} over paired probes."""
    X, Y = f.X, f.Y
    lhs = np.sum(Y.to_latent(f(x)) * Y.to_latent(y), axis=-1)
    rhs = np.sum(X.to_latent(x) * X.to_latent(f_t(y)), axis=-1)
    scale = np.linalg.norm(Y.to_latent(f(x)), axis=-1) * np.linalg.norm(Y.to_latent(y), axis=-1)
    scale = np.maximum(scale, np.linalg.norm(X.to_latent(x), axis=-1)
                       * np.linalg.norm(X.to_latent(f_t(y)), axis=-1))
    return float((np.abs(lhs - rhs) / np.maximum(scale, 1e-300)).max(initial=0.0))


def idempotency_residual(f: Linearizer, x) -> float:
    _require_shared_square(f, "idempotency")
    fx = f(x)
    return residual(f(fx), fx)


def null_space_probe(f: Linearizer, rng: RngStream | None = None, count: int = 10) -> np.ndarray:
    """Points x with g_x(x) in the null space of A (empty if A has full column rank)."""
    rng = rng or RngStream(0)
    a = f.matrix()
    _, s, vt = np.linalg.svd(a)
    tol = PINV_RCOND * (s.max(initial=0.0) or 1.0)
    rank = int(np.sum(s > tol))
    basis = vt[rank:]
    if basis.shape[0] == 0:
        return np.empty((0, f.n))
    coeffs = rng.normal((count, basis.shape[0]))
    return f.X.from_latent(coeffs @ basis)


def relative_error(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    denom = max(float(np.max(np.abs(b), initial=0.0)), 1e-300)
    diff = float(np.max(np.abs(a - b), initial=0.0))
    return 0.0 if diff == 0.0 else diff / denom if math.isfinite(diff) else math.inf
