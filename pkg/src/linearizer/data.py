"""Toy 2-D point clouds and CSV ingestion."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .rng import RngStream

DATASETS = ("two-moons", "8gaussians", "checkerboard")


class DataError(ValueError):
    pass


def two_moons(n_points: int, rng: RngStream, noise: float = 0.05) -> np.ndarray:
    n_out = n_points // 2
    n_in = n_points - n_out
    a = np.linspace(0.0, math.pi, n_out)
    b = np.linspace(0.0, math.pi, n_in)
    outer = np.stack([np.cos(a), np.sin(a)], axis=1)
    inner = np.stack([1.0 - np.cos(b), 0.5 - np.sin(b)], axis=1)
    pts = np.concatenate([outer, inner]) + rng.normal((n_points, 2), noise)
    # centre and scale to roughly unit spread
    return (pts - np.array([0.5, 0.25])) / np.array([0.87, 0.5])


def ring_centers(radius: float = 2.0) -> np.ndarray:
    ang = np.arange(8) * (2.0 * math.pi / 8)
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def eight_gaussians(n_points: int, rng: RngStream, std: float = 0.1, radius: float = 2.0) -> np.ndarray:
    centers = ring_centers(radius)
    idx = rng.integers(8, n_points)
    return centers[idx] + rng.normal((n_points, 2), std)


def checkerboard(n_points: int, rng: RngStream) -> np.ndarray:
    x1 = rng.uniform(n_points, -2.0, 2.0)
    col = np.floor(x1 + 2.0)
    # pick a row of the same parity as the column so the cells alternate
    row = 2.0 * rng.integers(2, n_points) + (col % 2)
    x2 = rng.uniform(n_points) + row - 2.0
    return np.stack([x1, x2], axis=1)


def dataset(name: str, n_points: int, seed: int = 0) -> np.ndarray:
    rng = RngStream(seed)
    if name == "two-moons":
        return two_moons(n_points, rng)
    if name == "8gaussians":
        return eight_gaussians(n_points, rng)
    if name == "checkerboard":
        return checkerboard(n_points, rng)
    raise DataError(f"unknown dataset {name!r}; choose from {DATASETS}")


def embed(points: np.ndarray, dim: int) -> np.ndarray:
    """Zero-pad points into R^dim."""
    if points.shape[1] > dim:
        raise DataError(f"cannot embed {points.shape[1]}-d points into R^{dim}")
    out = np.zeros((points.shape[0], dim))
    out[:, : points.shape[1]] = points
    return out


def ingest_csv(path: str | Path) -> np.ndarray:
    """Read numeric rows; a non-numeric first row is taken as a header."""
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                if lineno == 1 and not rows:
                    continue
                raise DataError(f"{path}:{lineno}: non-numeric cell in {row!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, found {len(vals)}")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)
