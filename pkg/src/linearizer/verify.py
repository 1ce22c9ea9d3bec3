"""Residual report over freshly initialized models (the `verify` task)."""
from __future__ import annotations

import numpy as np

from .cores import BinaryDiagonalCore, DenseCore, DiagonalCore, HyperCore, LowRankCore
from .flow import FlowModel, collapse_euler, collapse_rk4, euler_sample, rk4_sample, rk4_step_matrix
from .induced import InducedSpace, axiom_suite, sample_ball
from .maps import AnalyticBijection, coupling_stack, identity_map
from .operators import (Linearizer, adjoint_error, compose, gram, idempotency_residual, penrose_residuals,
                        pinv, power, relative_error, superposition_residual, svd, transpose)
from .rng import RngStream


def _entry(value: float, tolerance: float) -> dict:
    return {"residual": float(value), "tolerance": tolerance, "ok": bool(value < tolerance)}


def run_verify(seed: int = 0, trials: int = 1000, tolerance: float = 1e-6) -> dict:
    rng = RngStream(seed)
    report: dict[str, dict] = {}
    maps = {
        "identity": identity_map(2),
        "cube": AnalyticBijection("cube", 2),
        "coupling": coupling_stack(2, 6, rng=rng.substream(0), out_scale=0.5),
    }
    for name, g in maps.items():
        axioms = axiom_suite(InducedSpace(g), trials, tolerance, rng.substream(1))
        for axiom, r in axioms.residuals.items():
            report[f"axiom/{name}/{axiom}"] = _entry(r, tolerance)

    n = 4
    gx = coupling_stack(n, 6, rng=rng.substream(2))
    gy = coupling_stack(n, 6, rng=rng.substream(3))
    cores = {
        "dense": DenseCore(n, n, rng=rng.substream(4)),
        "low-rank": LowRankCore(n, n, 2, rng=rng.substream(5)),
        "diagonal": DiagonalCore(n, rng=rng.substream(6)),
        "binary-diagonal": BinaryDiagonalCore(n, rng=rng.substream(7)),
        "hyper": HyperCore(n, n, 2, rng=rng.substream(8)),
    }
    probe_rng = rng.substream(9)
    x1 = sample_ball(probe_rng, trials, n, 3.0)
    x2 = sample_ball(probe_rng, trials, n, 3.0)
    a1 = probe_rng.uniform(trials, -2.0, 2.0)
    a2 = probe_rng.uniform(trials, -2.0, 2.0)
    for name, core in cores.items():
        f = Linearizer(gx, gy, core, t=0.3 if core.time_dependent else None)
        report[f"superposition/{name}"] = _entry(superposition_residual(f, x1, x2, a1, a2), tolerance)

    f1 = Linearizer(gx, gy, cores["dense"])
    f2 = Linearizer(gy, gx, DenseCore(n, n, rng=rng.substream(10)))
    p = x1[:100]
    report["composition"] = _entry(relative_error(compose(f2, f1)(p), f2(f1(p))), 1e-8)

    fs = Linearizer(gx, gx, DenseCore(n, n, rng=rng.substream(11), scale=0.8))
    seq = p
    for _ in range(5):
        seq = fs(seq)
    report["power"] = _entry(relative_error(power(fs, 5)(p), seq), tolerance)
    report["transpose"] = _entry(adjoint_error(f1, transpose(f1), x1, x2), 1e-8)

    dec = svd(f1)
    Y, X = f1.Y, f1.X
    svd_res = max(
        float(np.abs(f1(dec.tilde_v[i]) - Y.odot(s, dec.tilde_u[i])).max()) for i, s in enumerate(dec.sigmas) if s > 0
    )
    report["svd/transport"] = _entry(svd_res, tolerance)
    report["svd/gram"] = _entry(max(np.abs(gram(X, dec.tilde_v) - np.eye(n)).max(),
                                    np.abs(gram(Y, dec.tilde_u) - np.eye(n)).max()), 1e-8)

    f_low = Linearizer(gx, gy, cores["low-rank"])
    report["penrose"] = _entry(penrose_residuals(f_low, pinv(f_low), 100, rng.substream(12)).max(), tolerance)

    proj = np.diag([1.0, 1.0, 0.0, 0.0])
    report["idempotency"] = _entry(idempotency_residual(Linearizer(gx, gx, DenseCore.of(proj)), x1), tolerance)

    model = FlowModel.create(2, rng=rng.substream(13))
    x0 = rng.substream(14).normal((200, 2))
    worst = 0.0
    for steps in (1, 10, 100):
        worst = max(worst, relative_error(collapse_euler(model, steps).one_step(model, x0),
                                          euler_sample(model, x0, steps)[0]))
    report["collapse/euler"] = _entry(worst, tolerance)
    report["collapse/rk4"] = _entry(relative_error(collapse_rk4(model, 50).one_step(model, x0),
                                                   rk4_sample(model, x0, 50)[0]), 1e-8)
    a = DenseCore(2, 2, rng=rng.substream(15)).matrix()
    taylor = np.eye(2) + a + a @ a / 2 + a @ a @ a / 6 + a @ a @ a @ a / 24
    report["rk4/taylor"] = _entry(float(np.abs(rk4_step_matrix(a, a, a, 1.0) - taylor).max()), 1e-12)

    return {"seed": seed, "trials": trials, "ok": all(e["ok"] for e in report.values()), "checks": report}
