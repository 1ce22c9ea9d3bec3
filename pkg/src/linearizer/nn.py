"""Minimal parameter containers and dense layers."""
from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from .autograd import Tensor, softplus
from .rng import RngStream


class Module:
    """Holds named Tensor parameters and child modules, in insertion order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, t in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def fingerprint(self) -> str:
        """sha256 over parameter names, shapes and little-endian bytes."""
        h = hashlib.sha256()
        for k, t in self.named_parameters():
            h.update(k.encode())
            h.update(str(t.data.shape).encode())
            h.update(t.data.astype("<f8").tobytes())
        return h.hexdigest()


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: RngStream, scale: float = 1.0):
        super().__init__()
        # Glorot-uniform, optionally shrunk for output layers
        limit = scale * np.sqrt(6.0 / (n_in + n_out))
        self.w = self.add_param("w", rng.uniform((n_in, n_out), -limit, limit))
        self.b = self.add_param("b", np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class MLP(Module):
    """Dense stack with softplus between layers and a linear head."""

    def __init__(self, sizes: list[int], rng: RngStream, out_scale: float = 1.0):
        super().__init__()
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            self.layers.append(self.add_child(f"l{i}", Dense(a, b, rng, out_scale if last else 1.0)))

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = softplus(layer(x))
        return self.layers[-1](x)
