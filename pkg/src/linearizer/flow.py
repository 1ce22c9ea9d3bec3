"""Flow matching with a shared-basis, time-dependent Linearizer.

In latent coordinates z = g(x) the learned velocity is linear, z' = A_t z, so
any fixed-step solver is a product of matrices that can be precomputed once
(the collapsed operator B) and applied in a single step: x1 = g^-1(B g(x0)).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ad
from .autograd import NumericError, ShapeError, Tensor
from .cores import DenseCore, HyperCore, LinearCore, build_core
from .induced import InducedSpace
from .maps import InvertibleMap, build_map, coupling_stack
from .nn import Module
from .operators import Linearizer, pinv
from .optim import Adam
from .rng import RngStream

SCHEMES = ("euler", "rk4")


class FlowModel(Module):
    """Shared bijection ``g`` (no time input) and a core producing A_t."""

    def __init__(self, g: InvertibleMap, core: LinearCore):
        super().__init__()
        if core.shape != (g.dim, g.dim):
            raise ShapeError(f"core {core.shape} does not match dimension {g.dim}")
        self.g = self.add_child("g", g)
        self.core = self.add_child("core", core)
        self.dim = g.dim

    @classmethod
    def create(cls, dim: int = 2, blocks: int = 6, width: int = 64, rank: int = 16,
               features: int = 32, rng: RngStream | None = None, coupling_scale: float = 0.1,
               core_scale: float = 0.5) -> "FlowModel":
        rng = rng or RngStream(0)
        g = coupling_stack(dim, blocks, "affine", width, rng, out_scale=coupling_scale)
        core = HyperCore(dim, dim, min(rank, dim), features, width, rng, out_scale=core_scale)
        return cls(g, core)

    def config(self) -> dict:
        return {"g": self.g.config(), "core": self.core.config()}

    @classmethod
    def from_config(cls, cfg: dict) -> "FlowModel":
        return cls(build_map(cfg["g"]), build_core(cfg["core"]))

    @property
    def space(self) -> InducedSpace:
        return InducedSpace(self.g)

    def matrices(self, ts) -> np.ndarray:
        """A_t for each time in ``ts``: shape (len(ts), n, n)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        if self.core.time_dependent:
            return self.core.matrices(ts)
        return np.broadcast_to(self.core.matrix(), (len(ts), self.dim, self.dim)).copy()

    def velocity(self, x, t: float) -> np.ndarray:
        """f(x, t) = g^-1(A_t g(x))."""
        return Linearizer(self.g, self.g, DenseCore.of(self.matrices([t])[0]))(x)

    def checksum(self) -> str:
        return self.fingerprint()


def constant_flow(g: InvertibleMap, a: np.ndarray) -> FlowModel:
    """Flow model whose core ignores time (A_t = a)."""
    return FlowModel(g, DenseCore.of(a))


# training ------------------------------------------------------------------

def forward_interpolate(model: FlowModel, x0, x1, t) -> np.ndarray:
    """x_t = g^-1((1 - t) g(x0) + t g(x1))."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("t must lie in [0, 1]")
    S = model.space
    if t.ndim == 1 and np.ndim(x0) == 2:
        t = t[:, None]
    return S.from_latent((1.0 - t) * S.to_latent(x0) + t * S.to_latent(x1))


def target_velocity(model: FlowModel, x0, x1) -> np.ndarray:
    return model.space.ominus(x1, x0)


def _core_apply(model: FlowModel, t: np.ndarray, z: Tensor) -> Tensor:
    """Row-wise A_{t_i} z_i for a batch."""
    core = model.core
    if isinstance(core, HyperCore):
        a1, a2 = core.factors(t)
        inner = a2 @ z.reshape(z.shape[0], z.shape[1], 1)
        return (a1 @ inner).reshape(z.shape[0], z.shape[1])
    if core.time_dependent:
        a = core.batch(t)
        return (a @ z.reshape(z.shape[0], z.shape[1], 1)).reshape(z.shape[0], z.shape[1])
    return z @ core.materialize().T


def fm_terms(model: FlowModel, x0, x1, t, norm: str = "latent") -> dict[str, Tensor]:
    """Flow-matching loss and the latent alignment term, both batch means.

    ``norm="latent"`` measures ||g(x1) - g(x0) - A_t g(x_t)||^2 (the induced norm of
    v (-) f(x_t, t)); ``norm="data"`` measures ||g^-1(...)||^2 instead.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    b = x0.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    z = model.g.forward(np.concatenate([x0, x1], axis=0))
    z0, z1 = z[:b], z[b:]
    tc = t[:, None]
    zt = z0 * (1.0 - tc) + z1 * tc
    resid = z1 - z0 - _core_apply(model, t, zt)
    if norm == "data":
        resid = model.g.inverse(resid)
    elif norm not in ("latent", "relative"):
        raise ValueError(f"unknown loss norm {norm!r}")
    fm = (resid * resid).sum(axis=1).mean()
    if norm == "relative":
        dz = z1 - z0
        fm = fm / (dz * dz).sum(axis=1).mean()
    align = _core_apply(model, t, z0) - z1
    return {"fm": fm, "align": (align * align).sum(axis=1).mean()}


def fm_loss(model: FlowModel, x0, x1, t, norm: str = "latent") -> Tensor:
    loss = fm_terms(model, x0, x1, t, norm)["fm"]
    if not math.isfinite(loss.item()):
        raise NumericError("flow-matching loss is not finite")
    return loss


def draw_batch(rng: RngStream, data: np.ndarray, batch: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx = rng.integers(len(data), batch)
    x1 = data[idx]
    x0 = rng.normal(x1.shape)
    t = rng.uniform(batch)
    return x0, x1, t


@dataclass
class FlowTrainResult:
    initial_loss: float
    final_loss: float
    history: list[dict]


def evaluate_fm(model: FlowModel, eval_batch, norm: str = "latent") -> float:
    with ad.no_grad():
        return fm_loss(model, *eval_batch, norm=norm).item()


def train_flow(model: FlowModel, data: np.ndarray, steps: int, batch: int = 256, lr: float = 1e-3,
               rng: RngStream | None = None, align_weight: float = 1.0, norm: str = "latent",
               log_every: int = 100, eval_size: int = 2048,
               log: Callable[[dict], None] | None = None) -> FlowTrainResult:
    """Adam on fm + align_weight * alignment; evaluates fm on a fixed held batch."""
    rng = rng or RngStream(0)
    eval_batch = draw_batch(rng.substream(1), data, eval_size)
    opt = Adam(model.parameters(), lr=lr)
    history: list[dict] = []

    def record(step: int, train_loss: float | None) -> dict:
        row = {"step": step, "eval_fm_loss": evaluate_fm(model, eval_batch, norm)}
        if train_loss is not None:
            row["train_loss"] = train_loss
        history.append(row)
        if log:
            log(row)
        return row

    initial = record(0, None)["eval_fm_loss"]
    for step in range(1, steps + 1):
        x0, x1, t = draw_batch(rng, data, batch)
        opt.zero_grad()
        terms = fm_terms(model, x0, x1, t, norm)
        loss = terms["fm"] + align_weight * terms["align"] if align_weight else terms["fm"]
        if not math.isfinite(loss.item()):
            raise NumericError(f"non-finite training loss at step {step}")
        loss.backward()
        opt.step()
        if step % log_every == 0 or step == steps:
            record(step, loss.item())
    return FlowTrainResult(initial, history[-1]["eval_fm_loss"], history)


# sampling and collapse -----------------------------------------------------

def _times(n_steps: int) -> np.ndarray:
    if n_steps < 1:
        raise ValueError("number of steps must be >= 1")
    return np.arange(n_steps) / n_steps


def euler_sample(model: FlowModel, x0, n_steps: int, path: str = "latent",
                 trajectory: bool = False):
    """N induced-space Euler steps from x0; returns (x1, trajectory or None).

    ``path="latent"`` updates z <- (I + dt A_t) z; ``path="data"`` performs
    x <- x (+) (dt (.) f(x, t)) with a full g/g^-1 roundtrip per operation.
    """
    dt = 1.0 / n_steps
    ts = _times(n_steps)
    mats = model.matrices(ts)
    S = model.space
    x0 = np.asarray(x0, dtype=np.float64)
    traj = [x0] if trajectory else None
    if path == "latent":
        z = S.to_latent(x0)
        for a in mats:
            z = z + dt * (z @ a.T)
            if trajectory:
                traj.append(S.from_latent(z))
        x = S.from_latent(z)
    elif path == "data":
        x = x0
        for a in mats:
            v = S.from_latent(S.to_latent(x) @ a.T)
            x = S.oplus(x, S.odot(dt, v))
            if trajectory:
                traj.append(x)
    else:
        raise ValueError(f"unknown path {path!r}")
    if not np.isfinite(x).all():
        raise NumericError("sampler state became non-finite")
    return x, (np.stack(traj) if trajectory else None)


def rk4_step_matrix(a_start: np.ndarray, a_mid: np.ndarray, a_end: np.ndarray, dt: float) -> np.ndarray:
    """Per-step RK4 operator for z' = A_t z, expanded from the four stages."""
    eye = np.eye(a_start.shape[0])
    k1 = a_start
    k2 = a_mid @ (eye + 0.5 * dt * k1)
    k3 = a_mid @ (eye + 0.5 * dt * k2)
    k4 = a_end @ (eye + dt * k3)
    return eye + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_mats(model: FlowModel, n_steps: int):
    dt = 1.0 / n_steps
    ts = _times(n_steps)
    # node times t_0..t_N plus midpoints, queried from the core directly
    nodes = model.matrices(np.arange(n_steps + 1) * dt)
    mids = model.matrices(ts + 0.5 * dt)
    return dt, nodes, mids


def rk4_sample(model: FlowModel, x0, n_steps: int, trajectory: bool = False):
    """Stage-by-stage classical RK4 in latent space (no matrix products)."""
    dt, nodes, mids = _rk4_mats(model, n_steps)
    S = model.space
    z = S.to_latent(np.asarray(x0, dtype=np.float64))
    traj = [np.asarray(x0, dtype=np.float64)] if trajectory else None
    for i in range(n_steps):
        k1 = z @ nodes[i].T
        k2 = (z + 0.5 * dt * k1) @ mids[i].T
        k3 = (z + 0.5 * dt * k2) @ mids[i].T
        k4 = (z + dt * k3) @ nodes[i + 1].T
        z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if trajectory:
            traj.append(S.from_latent(z))
    x = S.from_latent(z)
    return x, (np.stack(traj) if trajectory else None)


def sample(model: FlowModel, x0, n_steps: int, scheme: str = "euler", trajectory: bool = False):
    if scheme == "euler":
        return euler_sample(model, x0, n_steps, trajectory=trajectory)
    if scheme == "rk4":
        return rk4_sample(model, x0, n_steps, trajectory=trajectory)
    raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


@dataclass
class CollapsedOperator:
    matrix: np.ndarray
    scheme: str
    steps: int
    model_checksum: str

    def one_step(self, model: FlowModel, x0) -> np.ndarray:
        return one_step_sample(model, self.matrix, x0)

    def provenance(self) -> dict:
        return {"scheme": self.scheme, "steps": self.steps, "model_checksum": self.model_checksum,
                "matrix_sha256": hashlib.sha256(self.matrix.astype("<f8").tobytes()).hexdigest()}


def collapse_euler(model: FlowModel, n_steps: int) -> CollapsedOperator:
    """B = (I + dt A_{t_{N-1}}) ... (I + dt A_{t_0})."""
    dt = 1.0 / n_steps
    mats = model.matrices(_times(n_steps))
    eye = np.eye(model.dim)
    b = eye.copy()
    for a in mats:
        b = (eye + dt * a) @ b
    return CollapsedOperator(b, "euler", n_steps, model.checksum())


def collapse_rk4(model: FlowModel, n_steps: int) -> CollapsedOperator:
    dt, nodes, mids = _rk4_mats(model, n_steps)
    b = np.eye(model.dim)
    for i in range(n_steps):
        b = rk4_step_matrix(nodes[i], mids[i], nodes[i + 1], dt) @ b
    return CollapsedOperator(b, "rk4", n_steps, model.checksum())


def collapse(model: FlowModel, n_steps: int, scheme: str = "euler") -> CollapsedOperator:
    if scheme == "euler":
        return collapse_euler(model, n_steps)
    if scheme == "rk4":
        return collapse_rk4(model, n_steps)
    raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


def _b_matrix(model: FlowModel, b) -> np.ndarray:
    b = b.matrix if isinstance(b, CollapsedOperator) else np.asarray(b, dtype=np.float64)
    if b.shape != (model.dim, model.dim):
        raise ShapeError(f"operator shape {b.shape} does not match model dimension {model.dim}")
    return b


def one_step_sample(model: FlowModel, b, x0) -> np.ndarray:
    """x1 = g^-1(B g(x0))."""
    return generator(model, b)(np.asarray(x0, dtype=np.float64))


def generator(model: FlowModel, b) -> Linearizer:
    """The collapsed sampler as a Linearizer (g, g, B)."""
    return Linearizer(model.g, model.g, DenseCore.of(_b_matrix(model, b)))


def encode(model: FlowModel, b, x) -> np.ndarray:
    """Noise-space code f^+(x) of data points under the collapsed sampler f."""
    return pinv(generator(model, b))(np.asarray(x, dtype=np.float64))


def decode(model: FlowModel, b, z) -> np.ndarray:
    return generator(model, b)(np.asarray(z, dtype=np.float64))


def latent_interpolate(model: FlowModel, b, x1, x2, a: float, combine: str = "induced") -> np.ndarray:
    """Decode the combination (1 - a) f^+(x1) + a f^+(x2).

    ``combine="induced"`` forms it with the induced operations of g;
    ``combine="euclidean"`` forms it coordinate-wise on the codes.
    """
    z1, z2 = encode(model, b, x1), encode(model, b, x2)
    if combine == "induced":
        za = model.space.combine([1.0 - a, a], [z1, z2])
    elif combine == "euclidean":
        za = (1.0 - a) * z1 + a * z2
    else:
        raise ValueError(f"unknown combine mode {combine!r}")
    return decode(model, b, za)
