"""Toy style operators: several dense cores sharing one bijection.

Each style is a Linearizer g^-1(A_s g(x)) regressed onto its own target
transformation of the same point cloud. Because the bijection is shared,
mixing two styles amounts to mixing their core matrices.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import autograd as ad
from .autograd import NumericError
from .cores import DenseCore, LinearCore, build_core, interpolate_cores
from .maps import InvertibleMap, build_map, coupling_stack
from .nn import Module
from .operators import ContractError, Linearizer, same_map
from .optim import Adam
from .rng import RngStream

ALPHA_GRID = (0.0, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 1.0)


def rotate(x: np.ndarray, angle: float = math.pi / 3) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return x @ np.array([[c, s], [-s, c]])


def bend(x: np.ndarray, k: float = 0.5) -> np.ndarray:
    out = x.copy()
    out[:, 1] = x[:, 1] + k * x[:, 0] ** 2
    return out


TARGETS: dict[str, Callable[[np.ndarray], np.ndarray]] = {"rotate": rotate, "bend": bend}


class StyleLinearizer(Module):
    """A single style: bijection ``g`` plus its own core."""

    def __init__(self, g: InvertibleMap, core: LinearCore):
        super().__init__()
        self.g = self.add_child("g", g)
        self.core = self.add_child("core", core)

    def config(self) -> dict:
        return {"g": self.g.config(), "core": self.core.config()}

    @classmethod
    def from_config(cls, cfg: dict) -> "StyleLinearizer":
        return cls(build_map(cfg["g"]), build_core(cfg["core"]))

    def linearizer(self) -> Linearizer:
        return Linearizer(self.g, self.g, self.core)


def train_styles(data: np.ndarray, targets: Sequence[str] = ("rotate", "bend"), steps: int = 2000,
                 batch: int = 128, lr: float = 1e-3, rng: RngStream | None = None, blocks: int = 6,
                 width: int = 64, log_every: int = 100,
                 log: Callable[[dict], None] | None = None) -> list[StyleLinearizer]:
    """Fit one core per target under a single shared g by summed squared error."""
    rng = rng or RngStream(0)
    dim = data.shape[1]
    g = coupling_stack(dim, blocks, "affine", width, rng)
    cores = [DenseCore.of(np.eye(dim)) for _ in targets]
    fns = [TARGETS[t] for t in targets]
    styles = [StyleLinearizer(g, c) for c in cores]
    params = g.parameters() + [p for c in cores for p in c.parameters()]
    opt = Adam(params, lr=lr)
    for step in range(steps + 1):
        x = data[rng.integers(len(data), batch)]
        losses = []
        total = None
        for s, fn in zip(styles, fns):
            d = s.linearizer().forward_tensor(x) - fn(x)
            term = (d * d).sum(axis=1).mean()
            losses.append(term)
            total = term if total is None else total + term
        if not math.isfinite(total.item()):
            raise NumericError(f"non-finite style loss at step {step}")
        if step % log_every == 0 or step == steps:
            row = {"step": step, "loss": total.item()}
            row.update({f"loss_{t}": v.item() for t, v in zip(targets, losses)})
            if log:
                log(row)
        if step == steps:
            break
        opt.zero_grad()
        total.backward()
        opt.step()
    return styles


def style_interp(a: StyleLinearizer, b: StyleLinearizer, x, alphas: Sequence[float] = ALPHA_GRID) -> dict:
    """Outputs of g^-1((alpha A_a + (1 - alpha) A_b) g(x)) for each alpha."""
    if not same_map(a.g, b.g):
        raise ContractError("style checkpoints do not share the same bijection")
    x = np.asarray(x, dtype=np.float64)
    out = {}
    for alpha in alphas:
        core = interpolate_cores(a.core, b.core, float(alpha))
        out[float(alpha)] = Linearizer(a.g, a.g, core)(x)
    return out
