"""Parameterizations of the core matrix sandwiched between the two bijections."""
from __future__ import annotations

import math

import numpy as np

from . import autograd as ad
from .autograd import ShapeError, Tensor
from .nn import MLP, Module
from .rng import RngStream


class LinearCore(Module):
    kind = "abstract"
    time_dependent = False

    def __init__(self, m: int, n: int):
        super().__init__()
        self.m, self.n = m, n

    @property
    def shape(self) -> tuple[int, int]:
        return self.m, self.n

    def materialize(self, t: float | None = None) -> Tensor:
        """Differentiable m x n matrix."""
        raise NotImplementedError

    def matrix(self, t: float | None = None) -> np.ndarray:
        with ad.no_grad():
            return self.materialize(t).data.copy()

    def config(self) -> dict:
        return {"kind": self.kind, "m": self.m, "n": self.n}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.m}x{self.n})"


class DenseCore(LinearCore):
    kind = "dense"

    def __init__(self, m: int, n: int | None = None, matrix=None, rng: RngStream | None = None,
                 scale: float = 1.0):
        n = m if n is None else n
        super().__init__(m, n)
        if matrix is None:
            matrix = (rng or RngStream(0)).normal((m, n), scale / math.sqrt(n))
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (m, n):
            raise ShapeError(f"dense core expects shape {(m, n)}, got {matrix.shape}")
        self.a = self.add_param("a", matrix)

    @classmethod
    def of(cls, matrix) -> "DenseCore":
        matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        return cls(*matrix.shape, matrix=matrix)

    def materialize(self, t=None):
        return self.a


class LowRankCore(LinearCore):
    """A = A1 @ A2 with A1: m x r, A2: r x n."""

    kind = "low-rank"

    def __init__(self, m: int, n: int, rank: int, rng: RngStream | None = None, scale: float = 1.0):
        super().__init__(m, n)
        rng = rng or RngStream(0)
        self.rank = rank
        self.a1 = self.add_param("a1", rng.normal((m, rank), math.sqrt(scale / rank)))
        self.a2 = self.add_param("a2", rng.normal((rank, n), math.sqrt(scale / n)))

    def config(self):
        return {**super().config(), "rank": self.rank}

    def materialize(self, t=None):
        return self.a1 @ self.a2


class DiagonalCore(LinearCore):
    kind = "diagonal"

    def __init__(self, n: int, diag=None, rng: RngStream | None = None):
        super().__init__(n, n)
        if diag is None:
            diag = (rng or RngStream(0)).normal(n)
        self.d = self.add_param("d", np.asarray(diag, dtype=np.float64).reshape(n))

    def materialize(self, t=None):
        return np.eye(self.n) * self.d


class BinaryDiagonalCore(LinearCore):
    """Diagonal of {0, 1} entries from squashed logits with a straight-through gradient."""

    kind = "binary-diagonal"

    def __init__(self, n: int, logits=None, rng: RngStream | None = None):
        super().__init__(n, n)
        if logits is None:
            # start near 1 so that the projector begins close to the identity
            logits = 2.0 + (rng or RngStream(0)).normal(n, 0.1)
        self.logits = self.add_param("logits", np.asarray(logits, dtype=np.float64).reshape(n))

    def probabilities(self) -> Tensor:
        return ad.sigmoid(self.logits)

    def diagonal(self) -> Tensor:
        return ad.ste_round(self.probabilities())

    def materialize(self, t=None):
        return np.eye(self.n) * self.diagonal()


def time_features(t, count: int = 32) -> np.ndarray:
    """Sinusoidal embedding of scalar times: (B,) -> (B, count)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = count // 2
    freqs = math.pi * np.exp(np.linspace(0.0, math.log(32.0), half))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class HyperCore(LinearCore):
    """Low-rank factors produced by two 3-layer MLPs from a scalar input (time or style)."""

    kind = "hyper"
    time_dependent = True

    def __init__(self, m: int, n: int, rank: int, features: int = 32, width: int = 64,
                 rng: RngStream | None = None, out_scale: float = 0.5):
        super().__init__(m, n)
        rng = rng or RngStream(0)
        self.rank = rank
        self.features = features
        self.width = width
        self.out_scale = out_scale
        self.net1 = self.add_child("net1", MLP([features, width, width, m * rank], rng, out_scale))
        self.net2 = self.add_child("net2", MLP([features, width, width, rank * n], rng, out_scale))

    def config(self):
        return {**super().config(), "rank": self.rank, "features": self.features,
                "width": self.width, "out_scale": self.out_scale}

    def factors(self, t) -> tuple[Tensor, Tensor]:
        """Batched factors for times ``t`` of shape (B,): (B, m, r) and (B, r, n)."""
        feats = Tensor(time_features(t, self.features))
        b = feats.shape[0]
        a1 = self.net1(feats).reshape(b, self.m, self.rank)
        a2 = self.net2(feats).reshape(b, self.rank, self.n)
        return a1, a2

    def batch(self, t) -> Tensor:
        a1, a2 = self.factors(t)
        return a1 @ a2

    def matrices(self, t) -> np.ndarray:
        with ad.no_grad():
            return self.batch(t).data.copy()

    def materialize(self, t=None):
        if t is None:
            raise ValueError("hyper core needs its scalar input t")
        return self.batch([t]).reshape(self.m, self.n)


def build_core(cfg: dict) -> LinearCore:
    kind = cfg["kind"]
    m, n = cfg["m"], cfg["n"]
    if kind == "dense":
        return DenseCore(m, n)
    if kind == "low-rank":
        return LowRankCore(m, n, cfg["rank"])
    if kind == "diagonal":
        return DiagonalCore(n)
    if kind == "binary-diagonal":
        return BinaryDiagonalCore(n)
    if kind == "hyper":
        return HyperCore(m, n, cfg["rank"], cfg["features"], cfg["width"], out_scale=cfg["out_scale"])
    raise ValueError(f"unknown core kind {kind!r}")


def interpolate_cores(core_a: LinearCore, core_b: LinearCore, alpha: float,
                      t: float | None = None) -> DenseCore:
    """Dense core ``alpha * A_a + (1 - alpha) * A_b``."""
    if core_a.shape != core_b.shape:
        raise ShapeError(f"cannot interpolate cores of shapes {core_a.shape} and {core_b.shape}")
    ma, mb = core_a.matrix(t), core_b.matrix(t)
    if alpha == 1.0:
        return DenseCore.of(ma)
    if alpha == 0.0:
        return DenseCore.of(mb)
    return DenseCore.of(alpha * ma + (1.0 - alpha) * mb)
