"""Brute-force calibration of the interpolation constant on a random field family.

The family: sums of 1 to 5 pyramids ``a * max(0, 1 - |x - c|_inf / r)`` on
``[-1, 1]^n`` with centres uniform in the box, radii log-uniform in
``[0.05, 1]`` and amplitudes uniform in ``[-1, 1]``.  Pyramids are
piecewise linear, so the family matches the Lipschitz setting of the
inequality and is sampled exactly at the nodes.
"""

from __future__ import annotations

import numpy as np

from .energy import interpolation_terms, realized_interpolation_constant
from .grid import Field, Grid

__all__ = [
    "CALIBRATION_SEED",
    "HOLDOUT_SEED",
    "calibration_grid",
    "random_pl_field",
    "realized_constants",
    "calibrate_interpolation_constant",
]

CALIBRATION_SEED = 20240611
HOLDOUT_SEED = 77031

_NODES = {1: 401, 2: 101}


def calibration_grid(n: int) -> Grid:
    return Grid.cube(n, -1.0, 1.0, _NODES[n])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def random_pl_field(grid: Grid, rng: np.random.Generator) -> Field:
    mesh = grid.mesh()
    vals = np.zeros(grid.shape)
    for _ in range(int(rng.integers(1, 6))):
        c = rng.uniform(-1.0, 1.0, grid.dim)
        r = float(np.exp(rng.uniform(np.log(0.05), 0.0)))
        a = float(rng.uniform(-1.0, 1.0))
        dev = np.max(np.stack([np.abs(x - c[k]) for k, x in enumerate(mesh)]), axis=0)
        vals += a * np.maximum(0.0, 1.0 - dev / r)
    return Field(grid, vals, "free")


def realized_constants(n: int, count: int, seed: int) -> np.ndarray:
    grid = calibration_grid(n)
    rng = make_rng(seed)
    out = np.empty(count)
    for k in range(count):
        L, I, K = interpolation_terms(random_pl_field(grid, rng))
        out[k] = realized_interpolation_constant(L, I, K, n)
    return out


def calibrate_interpolation_constant(n: int, count: int = 1000,
                                     seed: int = CALIBRATION_SEED) -> float:
    """Largest realized constant over ``count`` fields of the family."""
    return float(np.max(realized_constants(n, count, seed)))
