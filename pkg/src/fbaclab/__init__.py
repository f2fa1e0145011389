"""Numerical laboratory for the free boundary Allen-Cahn energy.

Modules: ``grid`` (lattices, stencils, quadrature), ``energy`` (the energy and
its diagnostics), ``solver`` (critical points), ``varifold`` (diffuse varifold
observables), ``geometry`` (interfaces, bands, components), ``gamma``
(recovery sequences and Gamma-convergence audits) and ``cli`` (experiment runner).
"""

from .energy import EnergyReport, energy
from .errors import ConfigurationError, FBACError, InputError, NumericalError
from .grid import Field, Grid, VectorField
from .solver import SolverConfig, SolveTrace, exact_profile, minimize

__version__ = "0.1.0"

__all__ = [
    "Grid",
    "Field",
    "VectorField",
    "energy",
    "EnergyReport",
    "SolverConfig",
    "SolveTrace",
    "minimize",
    "exact_profile",
    "FBACError",
    "ConfigurationError",
    "InputError",
    "NumericalError",
]
