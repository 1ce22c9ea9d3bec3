"""Idempotent generative network built as g^-1(diag(lambda) g(x)) with lambda in {0, 1}.

Since diag(lambda)^2 = diag(lambda), the map is a projector everywhere, not
only near the data; training only decides which latent directions survive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ad
from .autograd import NumericError, Tensor
from .cores import BinaryDiagonalCore, build_core
from .maps import InvertibleMap, build_map, coupling_stack
from .nn import Module
from .operators import Linearizer
from .optim import Adam
from .rng import RngStream

DEFAULT_WEIGHTS = {"rec": 1.0, "sparse": 0.75, "iso": 0.001}


def ste_binarize(p: Tensor) -> Tensor:
    """round(P) in the forward pass, identity gradient to P in the backward pass."""
    return ad.ste_round(p)


class IGNModel(Module):
    def __init__(self, g: InvertibleMap, core: BinaryDiagonalCore, weights: dict | None = None):
        super().__init__()
        self.g = self.add_child("g", g)
        self.core = self.add_child("core", core)
        self.dim = g.dim
        self.weights = {**DEFAULT_WEIGHTS, **(weights or {})}

    @classmethod
    def create(cls, dim: int = 16, blocks: int = 6, width: int = 64, rng: RngStream | None = None,
               coupling_scale: float = 0.1, logit_init: float = 1.0,
               weights: dict | None = None) -> "IGNModel":
        rng = rng or RngStream(0)
        g = coupling_stack(dim, blocks, "additive", width, rng, out_scale=coupling_scale)
        core = BinaryDiagonalCore(dim, logits=logit_init + rng.normal(dim, 0.01))
        return cls(g, core, weights)

    def config(self) -> dict:
        return {"g": self.g.config(), "core": self.core.config(), "weights": dict(self.weights)}

    @classmethod
    def from_config(cls, cfg: dict) -> "IGNModel":
        return cls(build_map(cfg["g"]), build_core(cfg["core"]), cfg["weights"])

    def diagonal(self) -> np.ndarray:
        with ad.no_grad():
            return self.core.diagonal().data.copy()

    def linearizer(self) -> Linearizer:
        return Linearizer(self.g, self.g, self.core)

    def project(self, x) -> np.ndarray:
        return self.linearizer()(x)

    def rank(self) -> int:
        return int(self.diagonal().sum())


def ign_terms(model: IGNModel, x, diag: Tensor | None = None) -> dict[str, Tensor]:
    """Weighted loss and its three parts for a batch ``x`` of shape (B, n).

    ``diag`` replaces the straight-through diagonal (used by gradient checks).
    """
    x = np.asarray(x, dtype=np.float64)
    b = x.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    lam = model.core.diagonal() if diag is None else diag
    z_all = model.g.forward(np.concatenate([x, np.zeros((1, model.dim))], axis=0))
    z, z_zero = z_all[:b], z_all[b:]
    fx = model.g.inverse(z * lam)
    d = fx - x
    rec = (d * d).sum(axis=1).mean()
    sparse = lam.mean()
    dz = z - z_zero
    iso = ((dz * dz).sum(axis=1) - (x * x).sum(axis=1)).abs().mean()
    w = model.weights
    total = w["rec"] * rec + w["sparse"] * sparse + w["iso"] * iso
    return {"total": total, "rec": rec, "sparse": sparse, "iso": iso}


def ign_loss(model: IGNModel, x) -> tuple[Tensor, dict[str, float]]:
    terms = ign_terms(model, x)
    parts = {k: v.item() for k, v in terms.items()}
    if not all(math.isfinite(v) for v in parts.values()):
        raise NumericError(f"non-finite IGN loss: {parts}")
    return terms["total"], parts


def frozen_surrogate(model: IGNModel) -> Callable[[], Tensor]:
    """Diagonal round(P0) + (P - P0) with P0 captured now.

    Its value equals the binarized diagonal at the current parameters and its
    derivative equals the straight-through derivative, yet it is a smooth
    function of the logits, so finite differences can check the STE wiring.
    """
    with ad.no_grad():
        p0 = model.core.probabilities().data.copy()
    mask = (p0 > 0.5).astype(np.float64)

    def diag() -> Tensor:
        return (model.core.probabilities() - p0) + mask

    return diag


@dataclass
class IGNTrainResult:
    history: list[dict] = field(default_factory=list)
    idempotency: list[float] = field(default_factory=list)


def train_ign(model: IGNModel, data: np.ndarray, steps: int, batch: int = 128, lr: float = 1e-3,
              rng: RngStream | None = None, log_every: int = 100,
              probe: np.ndarray | None = None,
              log: Callable[[dict], None] | None = None) -> IGNTrainResult:
    """Adam on the weighted IGN loss. No noise is injected: only data points are seen.

    If ``probe`` points are given, the idempotency residual on them is logged
    at every logging step (including step 0).
    """
    from .operators import idempotency_residual

    rng = rng or RngStream(0)
    opt = Adam(model.parameters(), lr=lr)
    result = IGNTrainResult()

    def record(step: int, parts: dict | None) -> None:
        with ad.no_grad():
            zero_norm = float(np.linalg.norm(model.g.forward(np.zeros(model.dim)).data))
        row = {"step": step, "rank": model.rank(), "g_zero_norm": zero_norm}
        if parts:
            row.update(parts)
        if probe is not None:
            r = idempotency_residual(model.linearizer(), probe)
            row["idempotency_residual"] = r
            result.idempotency.append(r)
        result.history.append(row)
        if log:
            log(row)

    record(0, None)
    for step in range(1, steps + 1):
        x = data[rng.integers(len(data), batch)]
        opt.zero_grad()
        loss, parts = ign_loss(model, x)
        loss.backward()
        opt.step()
        if step % log_every == 0 or step == steps:
            record(step, parts)
    return result
