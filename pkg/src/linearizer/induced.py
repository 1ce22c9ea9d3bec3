"""Vector-space structure induced on R^n by a bijection g.

    u (+) v = g^-1(g(u) + g(v))        a (.) v = g^-1(a g(v))
    <u, v>_g = <g(u), g(v)>

Everything here is evaluation only (no gradient tape) and returns numpy arrays.
Vectors may be 1-D or row batches of shape (B, n).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import NumericError, ShapeError, no_grad
from .maps import InvertibleMap
from .rng import RngStream

AXIOMS = (
    "closure",
    "associativity",
    "commutativity",
    "additive_identity",
    "additive_inverse",
    "scalar_compatibility",
    "scalar_identity",
    "distributivity_vector",
    "distributivity_scalar",
)


def _finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value in {what}")
    return arr


class InducedSpace:
    def __init__(self, g: InvertibleMap):
        self.g = g
        self.n = g.dim

    def _check(self, *vs) -> list[np.ndarray]:
        out = []
        for v in vs:
            a = np.asarray(v, dtype=np.float64)
            if a.shape[-1] != self.n:
                raise ShapeError(f"expected vectors of dimension {self.n}, got shape {a.shape}")
            out.append(a)
        shapes = {a.shape for a in out}
        if len(shapes) > 1 and not all(a.ndim == 1 for a in out):
            try:
                np.broadcast_shapes(*shapes)
            except ValueError:
                raise ShapeError(f"incompatible shapes {sorted(shapes)}") from None
        return out

    def to_latent(self, v) -> np.ndarray:
        with no_grad():
            return self.g.forward(v).data

    def from_latent(self, z) -> np.ndarray:
        with no_grad():
            return _finite(self.g.inverse(z).data, "g^-1")

    def zero_vector(self) -> np.ndarray:
        return self.from_latent(np.zeros(self.n))

    def oplus(self, u, v) -> np.ndarray:
        u, v = self._check(u, v)
        return self.from_latent(self.to_latent(u) + self.to_latent(v))

    def odot(self, a, v) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        if not np.isfinite(a).all():
            raise NumericError("induced scaling by a non-finite scalar")
        (v,) = self._check(v)
        if a.ndim == 1 and v.ndim == 2:
            a = a[:, None]
        return self.from_latent(a * self.to_latent(v))

    def ominus(self, u, v) -> np.ndarray:
        u, v = self._check(u, v)
        return self.from_latent(self.to_latent(u) - self.to_latent(v))

    def neg(self, v) -> np.ndarray:
        (v,) = self._check(v)
        return self.from_latent(-self.to_latent(v))

    def inner(self, u, v) -> np.ndarray | float:
        u, v = self._check(u, v)
        r = np.sum(self.to_latent(u) * self.to_latent(v), axis=-1)
        return float(r) if np.ndim(r) == 0 else r

    def norm(self, v) -> np.ndarray | float:
        (v,) = self._check(v)
        r = np.linalg.norm(self.to_latent(v), axis=-1)
        return float(r) if np.ndim(r) == 0 else r

    def combine(self, coeffs, vectors) -> np.ndarray:
        """Induced linear combination a_1 (.) v_1 (+) ... (+) a_k (.) v_k."""
        z = sum(float(a) * self.to_latent(v) for a, v in zip(coeffs, vectors))
        return self.from_latent(z)


def residual(lhs, rhs) -> float:
    """Max-abs difference of two data-side vectors (Euclidean, after g^-1)."""
    d = np.abs(np.asarray(lhs) - np.asarray(rhs))
    if not np.isfinite(d).all():
        return math.inf
    return float(d.max(initial=0.0))


@dataclass
class AxiomReport:
    residuals: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-6
    trials: int = 0

    @property
    def ok(self) -> bool:
        return all(math.isfinite(r) and r < self.tolerance for r in self.residuals.values())

    def to_dict(self) -> dict:
        return {"trials": self.trials, "tolerance": self.tolerance, "ok": self.ok,
                "residuals": dict(self.residuals)}


def sample_ball(rng: RngStream, count: int, dim: int, radius: float) -> np.ndarray:
    """Standard normal draws rescaled (radially) so that every norm is <= radius."""
    v = rng.normal((count, dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    cap = np.maximum(norms / radius, 1.0)
    return v / cap


def axiom_suite(space: InducedSpace, trials: int = 1000, tolerance: float = 1e-6,
                rng: RngStream | None = None, radius: float = 3.0,
                scalar_range: float = 2.0) -> AxiomReport:
    """Numerically check the nine vector-space axioms on random vectors and scalars.

    Each residual is the worst max-abs data-side discrepancy between the two
    sides of the axiom; closure is the worst deviation from finiteness and the
    right dimension (0 when closed).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = rng or RngStream(0)
    n = space.n
    u, v, w = (sample_ball(rng, trials, n, radius) for _ in range(3))
    a = rng.uniform((trials, 1), -scalar_range, scalar_range)
    b = rng.uniform((trials, 1), -scalar_range, scalar_range)
    S = space
    zero = np.broadcast_to(S.zero_vector(), u.shape)
    res: dict[str, float] = {}
    try:
        s = S.oplus(u, v)
        res["closure"] = 0.0 if s.shape == u.shape and np.isfinite(s).all() else math.inf
        res["associativity"] = residual(S.oplus(S.oplus(u, v), w), S.oplus(u, S.oplus(v, w)))
        res["commutativity"] = residual(s, S.oplus(v, u))
        res["additive_identity"] = residual(S.oplus(u, zero), u)
        res["additive_inverse"] = residual(S.oplus(u, S.neg(u)), zero)
        res["scalar_compatibility"] = residual(S.odot(a, S.odot(b, u)), S.odot(a * b, u))
        res["scalar_identity"] = residual(S.odot(np.ones_like(a), u), u)
        res["distributivity_vector"] = residual(S.odot(a, S.oplus(u, v)), S.oplus(S.odot(a, u), S.odot(a, v)))
        res["distributivity_scalar"] = residual(S.odot(a + b, u), S.oplus(S.odot(a, u), S.odot(b, u)))
    except NumericError:
        for name in AXIOMS:
            res.setdefault(name, math.inf)
    return AxiomReport({k: res[k] for k in AXIOMS}, tolerance, trials)
