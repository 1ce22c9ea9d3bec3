"""Central-difference oracle for reverse-mode gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autograd import NumericError, Tensor
from .rng import RngStream


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def failing(self) -> list[str]:
        return [k for k, v in self.errors.items() if not v < self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failing


def _eval(fn: Callable[[], Tensor]) -> float:
    value = float(fn().data)
    if not math.isfinite(value):
        raise NumericError("grad_check: objective evaluated to a non-finite value")
    return value


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | RngStream | None = None,
    names: Sequence[str] | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn()`` against central differences.

    The error for each parameter is ``max|analytic - numeric| / max(|analytic|, |numeric|)``
    over the probed coordinates (norm-wise, so tiny individual entries do not
    dominate). Gradients whose magnitude is below ``floor`` are compared in
    absolute terms, since a relative error between two roundoff-sized numbers
    is meaningless. ``max_coords`` subsamples coordinates of large parameters.
    """
    names = list(names) if names is not None else [p.name or f"param{i}" for i, p in enumerate(params)]
    for p in params:
        p.grad = None
    out = fn()
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    if isinstance(rng, RngStream):
        rng = rng.generator()
    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(tolerance=tolerance)
    for name, p, ga in zip(names, params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        num = np.empty(len(coords))
        for j, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + step
            fp = _eval(fn)
            flat[c] = orig - step
            fm = _eval(fn)
            flat[c] = orig
            num[j] = (fp - fm) / (2.0 * step)
        ana = ga.reshape(-1)[coords]
        scale = max(np.max(np.abs(ana), initial=0.0), np.max(np.abs(num), initial=0.0))
        diff = np.max(np.abs(ana - num), initial=0.0)
        report.errors[name] = float(diff / max(scale, floor))
    for p in params:
        p.grad = None
    return report
