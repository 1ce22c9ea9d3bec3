"""Counter-based random streams.

Each draw opens a Philox generator keyed by ``(seed, counter)`` and then
advances the counter, so the full state is two integers.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class RngStream:
    def __init__(self, seed: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter) & _MASK64

    def _next(self) -> np.random.Generator:
        bg = np.random.Philox(key=self.seed, counter=self.counter)
        self.counter = (self.counter + 1) & _MASK64
        return np.random.Generator(bg)

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        return self._next().standard_normal(size) * scale

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._next().uniform(low, high, size)

    def integers(self, high: int, size) -> np.ndarray:
        return self._next().integers(0, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._next().permutation(n)

    def generator(self) -> np.random.Generator:
        """A throwaway numpy generator for bulk draws (advances the counter once)."""
        return self._next()

    def substream(self, index: int) -> "RngStream":
        """Independent stream derived from this one without advancing it."""
        mixed = np.random.SeedSequence([self.seed, self.counter, index]).generate_state(2, np.uint64)
        return RngStream(int(mixed[0]), 0)

    def state(self) -> dict:
        return {"seed": self.seed, "counter": self.counter}

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        return cls(state["seed"], state["counter"])

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, counter={self.counter})"
