"""Standard test problems: grids, initial fields and solver configurations."""

from __future__ import annotations

import numpy as np

from .grid import Field, Grid
from .solver import Boundary, SolverConfig, exact_profile

__all__ = ["UNIT_SQUARE", "flat_problem", "tilted_problem", "tilted_normal"]

UNIT_SQUARE = ((0.0, 1.0), (0.0, 1.0))


def flat_problem(epsilon: float, h_ratio: float = 8.0, spacing=None, extents=UNIT_SQUARE,
                 energy_tol: float = 1e-7) -> tuple[Grid, Field, SolverConfig]:
    """Flat Dirichlet data: ``u = -1`` on the bottom face, ``+1`` on the top face.

    The initial field is a ramp of half-width ``2 eps`` centred at ``y = 1/2``.
    ``spacing`` overrides the isotropic ``h = eps / h_ratio``.
    """
    h = epsilon / h_ratio if spacing is None else spacing
    grid = Grid.from_spacing(extents, h)
    y = grid.mesh()[-1]
    mid = 0.5 * (extents[-1][0] + extents[-1][1])
    init = Field(grid, np.clip((y - mid) / (2.0 * epsilon), -1.0, 1.0))
    last = "xyz"[grid.dim - 1]
    boundary = Boundary.from_faces({f"{last}_lo": -1.0, f"{last}_hi": 1.0})
    config = SolverConfig(epsilon=epsilon, boundary=boundary, energy_tol=energy_tol)
    return grid, init, config


def tilted_normal(angle: float) -> np.ndarray:
    return np.array([np.sin(angle), np.cos(angle)])


def tilted_problem(epsilon: float, h_ratio: float, angle: float = 0.3,
                   energy_tol: float = 1e-9) -> tuple[Grid, Field, SolverConfig]:
    """Straight interface through the centre of the unit square at ``angle`` from horizontal.

    The boundary holds the exact profile; the interior starts from a ramp
    of half-width ``1.5 eps`` so the solver has to relax the layer.
    """
    grid = Grid.from_spacing(UNIT_SQUARE, epsilon / h_ratio)
    n = tilted_normal(angle)
    offset = float(n @ np.array([0.5, 0.5]))
    exact = exact_profile(grid, epsilon, normal=n, offset=offset)
    X, Y = grid.mesh()
    ramp = np.clip((n[0] * X + n[1] * Y - offset) / (1.5 * epsilon), -1.0, 1.0)
    bnd = grid.boundary_mask()
    init = Field(grid, np.where(bnd, exact.values, ramp))
    config = SolverConfig(epsilon=epsilon, boundary=Boundary.from_init(), energy_tol=energy_tol)
    return grid, init, config
