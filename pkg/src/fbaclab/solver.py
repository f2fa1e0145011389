"""Approximate critical points of the free boundary Allen-Cahn energy.

Two routes are provided:

* :func:`minimize` -- projected gradient descent on the mollified energy with
  continuation in the ramp width ``kappa``, finished by a descent on the exact
  energy of the piecewise-linear interpolant (:func:`sharp_energy`).
* :func:`harmonic_band_solve` -- fixed-point iteration on the band
  ``{|u| < 1}``: solve Laplace's equation inside the band, then move band
  edges until ``eps |grad u|`` is close to 1 there.

Plus the exact one-dimensional profiles used as test configurations and the
first variation of the energy along a vector field.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .energy import EnergyReport, Mollifier, energy, in_band, mollified_energy
from .errors import ConfigurationError, InputError, NumericalError
from .grid import (
    Field,
    Grid,
    VectorField,
    divergence,
    gradient,
    integrate,
    jacobian,
    node_weights,
)

__all__ = [
    "Boundary",
    "SolverConfig",
    "SolveTrace",
    "default_kappa_schedule",
    "minimize",
    "harmonic_band_solve",
    "exact_profile",
    "multi_sheet_profile",
    "first_variation",
    "sharp_energy",
    "bump",
    "bump_field",
    "bump_basis",
    "c1_norm",
    "stationarity_residual",
    "hessian_max",
]

_AXIS_NAMES = "xyz"


@dataclass(frozen=True)
class Boundary:
    """Dirichlet data on the domain boundary.

    ``kind`` is ``"natural"`` (no constraint), ``"init"`` (hold the initial
    field on the whole boundary) or ``"faces"`` with ``faces`` mapping names
    like ``"y_lo"`` / ``"x_hi"`` to a value in ``[-1, 1]``.
    """

    kind: str = "natural"
    faces: tuple[tuple[str, float], ...] = ()

    @classmethod
    def natural(cls) -> "Boundary":
        return cls("natural")

    @classmethod
    def from_init(cls) -> "Boundary":
        return cls("init")

    @classmethod
    def from_faces(cls, faces: Mapping[str, float]) -> "Boundary":
        return cls("faces", tuple(sorted((str(k), float(v)) for k, v in faces.items())))

    @classmethod
    def parse(cls, spec) -> "Boundary":
        if isinstance(spec, Boundary):
            return spec
        if spec is None or spec == "natural":
            return cls.natural()
        if spec == "init":
            return cls.from_init()
        if isinstance(spec, Mapping):
            return cls.from_faces(spec)
        raise ConfigurationError(f"unrecognised boundary specification {spec!r}")

    def validate(self, grid: Grid) -> list[str]:
        problems = []
        if self.kind not in ("natural", "init", "faces"):
            problems.append(f"unknown boundary kind {self.kind!r}")
        for name, value in self.faces:
            try:
                _parse_face(name, grid)
            except ConfigurationError as exc:
                problems.append(str(exc))
            if not -1.0 <= value <= 1.0:
                problems.append(f"Dirichlet value {value} on {name} outside [-1, 1]")
        return problems

    def resolve(self, grid: Grid, init: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(mask, values)`` of constrained nodes."""
        mask = np.zeros(grid.shape, dtype=bool)
        values = np.zeros(grid.shape)
        if self.kind == "init":
            mask = grid.boundary_mask()
            values = np.where(mask, init, 0.0)
        elif self.kind == "faces":
            for name, value in self.faces:
                axis, side = _parse_face(name, grid)
                fm = grid.face_mask(axis, side)
                mask |= fm
                values[fm] = value
        return mask, values

    def to_dict(self):
        if self.kind == "faces":
            return dict(self.faces)
        return self.kind


def _parse_face(name: str, grid: Grid) -> tuple[int, str]:
    try:
        ax, side = name.split("_")
        axis = _AXIS_NAMES.index(ax)
    except ValueError:
        raise ConfigurationError(f"bad face name {name!r}; expected e.g. 'y_lo'") from None
    if axis >= grid.dim or side not in ("lo", "hi"):
        raise ConfigurationError(f"face {name!r} does not exist on a {grid.dim}D grid")
    return axis, side


def default_kappa_schedule(h: float) -> tuple[float, ...]:
    sched = [0.5, 0.25, 0.125, max(h, 0.0625)]
    out = []
    for k in sched:
        if not out or k < out[-1]:
            out.append(k)
    return tuple(out)


@dataclass
class SolverConfig:
    epsilon: float
    kappa_schedule: tuple[float, ...] | None = None
    safety: float = 0.2
    max_iters: int = 20000
    energy_tol: float = 1e-7
    boundary: Boundary = field(default_factory=Boundary.natural)
    seed: int = 0
    window: int = 50
    max_band_iters: int = 500
    accelerate: bool = True
    sharp_stage: bool = True

    def __post_init__(self):
        self.boundary = Boundary.parse(self.boundary)
        if self.kappa_schedule is not None:
            self.kappa_schedule = tuple(float(k) for k in self.kappa_schedule)

    def schedule(self, grid: Grid) -> tuple[float, ...]:
        if self.kappa_schedule is None:
            return default_kappa_schedule(grid.h)
        return self.kappa_schedule

    def step(self, grid: Grid) -> float:
        """Explicit step ``safety / (eps * sum_k 4 / h_k^2)``.

        On an isotropic grid this is ``safety * h^2 / (4 * dim * eps)``.
        """
        return self.safety / (self.epsilon * sum(4.0 / hk**2 for hk in grid.spacing))

    def validate(self, grid: Grid) -> list[str]:
        problems = []
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            problems.append("epsilon must be positive")
        sched = self.schedule(grid)
        if not sched:
            problems.append("kappa schedule is empty")
        if any(not 0.0 < k < 1.0 for k in sched):
            problems.append("kappa values must lie in (0, 1)")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            problems.append("kappa schedule must be strictly decreasing")
        if sched and sched[-1] < grid.h:
            problems.append(f"kappa_min {sched[-1]} is below the grid spacing {grid.h}")
        if not 0.0 < self.safety <= 1.0:
            problems.append("step safety factor must lie in (0, 1]")
        if self.max_iters < 1:
            problems.append("max_iters must be positive")
        if self.energy_tol <= 0:
            problems.append("energy_tol must be positive")
        problems.extend(self.boundary.validate(grid))
        return problems

    def to_dict(self) -> dict:
        d = asdict(self)
        d["boundary"] = self.boundary.to_dict()
        d["kappa_schedule"] = None if self.kappa_schedule is None else list(self.kappa_schedule)
        return d


@dataclass
class SolveTrace:
    method: str
    stage_kappas: list[float] = field(default_factory=list)
    stage_iterations: list[int] = field(default_factory=list)
    stage_converged: list[bool] = field(default_factory=list)
    energy_history: list[list[float]] = field(default_factory=list)
    edge_moves: list[int] = field(default_factory=list)
    final: EnergyReport | None = None
    stationarity_residual: float | None = None
    status: str = "converged"
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["final"] = None if self.final is None else self.final.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _check_grid_compat(u: Field, config: SolverConfig):
    problems = config.validate(u.grid)
    if problems:
        raise ConfigurationError("; ".join(problems))


def minimize(config: SolverConfig, init: Field, *, residual: bool = True):
    """Projected gradient descent on the mollified energy with kappa continuation.

    Each stage runs ``u <- P(u - tau * grad)`` where ``P`` clips to ``[-1, 1]``
    and re-imposes the Dirichlet nodes.  A step that raises the mollified
    energy by more than ``1e-10`` relative is retried with half the step.  A
    stage stops once the energy decreased by less than ``energy_tol``
    (relative) over the last ``window`` iterations.

    Returns ``(field, trace)``; unconverged stages are flagged in the trace.
    """
    _check_grid_compat(init, config)
    grid = init.grid
    eps = config.epsilon
    u = np.clip(init.values, -1.0, 1.0).copy()
    if not np.all(np.isfinite(u)):
        raise InputError("initial field is not finite")
    fixed, fixed_vals = config.boundary.resolve(grid, init.values)
    if np.any(np.abs(fixed_vals[fixed]) > 1.0):
        raise InputError("Dirichlet values must lie in [-1, 1]")
    u[fixed] = fixed_vals[fixed]
    tau0 = config.step(grid)
    trace = SolveTrace(method="mollified_descent")

    for kappa in config.schedule(grid):
        moll = Mollifier(kappa)
        u, history, iters, converged = _descend_stage(
            u, grid, eps, moll, fixed, fixed_vals, tau0, config
        )
        value = history[-1]
        if not np.isfinite(value):
            raise NumericalError("energy became non-finite during descent")
        trace.stage_kappas.append(kappa)
        trace.stage_iterations.append(iters)
        trace.stage_converged.append(converged)
        trace.energy_history.append(history)

    if config.sharp_stage and grid.dim <= 2:
        u, history, iters, converged = sharp_stage(Field(grid, u), config, fixed, fixed_vals)
        u[fixed] = np.clip(fixed_vals[fixed], -1.0, 1.0)
        trace.stage_kappas.append(0.0)
        trace.stage_iterations.append(iters)
        trace.stage_converged.append(converged)
        trace.energy_history.append(history)

    out = Field(grid, u)
    if not all(trace.stage_converged):
        trace.status = "stage_not_converged"
        bad = [k for k, c in zip(trace.stage_kappas, trace.stage_converged) if not c]
        trace.message = f"stages with kappa {bad} hit max_iters"
    trace.final = energy(out, eps)
    if residual:
        trace.stationarity_residual = stationarity_residual(out, eps)
    return out, trace


def _descend_stage(u, grid, eps, moll, fixed, fixed_vals, tau0, config):
    """One continuation stage of monotone accelerated projected gradient.

    Extrapolated steps (Nesterov momentum) are kept only when they do not
    raise the energy; otherwise the momentum is reset and a plain projected
    step from the current iterate is taken, halving the step until the
    energy does not increase.  Accepted iterates are therefore monotone.
    """

    def project(v):
        v = np.clip(v, -1.0, 1.0)
        v[fixed] = fixed_vals[fixed]
        return v

    def evaluate(v):
        val, gr = mollified_energy(v, eps, moll, grid=grid)
        gr[fixed] = 0.0
        return val, gr

    value, grad = evaluate(u)
    if not np.isfinite(value):
        raise InputError("non-finite energy at the initial field")
    slack = 1e-10
    history = [value]
    prev = u
    t_k = 1.0
    converged = False
    iters = 0
    for iters in range(1, config.max_iters + 1):
        trial = None
        if config.accelerate and t_k > 1.0:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
            y = project(u + ((t_k - 1.0) / t_next) * (u - prev))
            _, y_grad = evaluate(y)
            trial = project(y - tau0 * y_grad)
            t_value, t_grad = evaluate(trial)
            if t_value > value + slack * abs(value):
                trial = None
            else:
                t_k = t_next
        if trial is None:
            tau = tau0
            for _ in range(40):
                trial = project(u - tau * grad)
                t_value, t_grad = evaluate(trial)
                if t_value <= value + slack * abs(value):
                    break
                tau *= 0.5
            else:
                raise NumericalError("line search failed to find a descent step")
            t_k = 2.0 if config.accelerate else 1.0
        moved = np.any(trial != u)
        prev, u, value, grad = u, trial, t_value, t_grad
        history.append(value)
        if not moved:
            converged = True
            break
        if iters >= config.window:
            ref = history[-config.window - 1]
            if ref - value <= config.energy_tol * max(abs(value), 1e-300):
                converged = True
                break
    return u, history, iters, converged


# --- sharp stage --------------------------------------------------------------
#
# The field is written as u = clamp(v) with v an unconstrained nodal field, and
# J is evaluated exactly on the piecewise-linear interpolant of v over a
# simplicial split of every cell (both diagonals averaged in 2D).  The free
# boundary {|v| = 1} then moves continuously inside cells instead of snapping
# to lattice nodes, and straight profiles at any angle are exact minimizers.


def _fraction_below(t, s0, s1, s2, strict):
    """Fraction of a triangle where a linear function with sorted vertex values is below ``t``.

    Returns ``(F, dF/ds0, dF/ds1, dF/ds2)``.  ``strict`` selects ``v < t``
    (else ``v <= t``), which only matters for constant triangles.
    """
    F = np.zeros_like(s0)
    d0 = np.zeros_like(s0)
    d1 = np.zeros_like(s0)
    d2 = np.zeros_like(s0)
    if strict:
        above = t > s2
        mid = (t > s0) & ~above
    else:
        above = t >= s2
        mid = (t >= s0) & ~above
    F[above] = 1.0
    a = mid & (t <= s1) & (s1 > s0)
    b = mid & ~a
    with np.errstate(divide="ignore", invalid="ignore"):
        e10 = s1 - s0
        e20 = s2 - s0
        e21 = s2 - s1
        Fa = (t - s0) ** 2 / (e10 * e20)
        F[a] = Fa[a]
        d0[a] = (-2.0 * (t - s0) / (e10 * e20) + Fa / e10 + Fa / e20)[a]
        d1[a] = (-Fa / e10)[a]
        d2[a] = (-Fa / e20)[a]
        Q = (s2 - t) ** 2 / (e20 * e21)
        F[b] = 1.0 - Q[b]
        d0[b] = (-Q / e20)[b]
        d1[b] = (-Q / e21)[b]
        d2[b] = (-(2.0 * (s2 - t) / (e20 * e21) - Q / e20 - Q / e21))[b]
    return F, d0, d1, d2


def _fraction_below_1d(t, s0, s1, strict):
    F = np.zeros_like(s0)
    d0 = np.zeros_like(s0)
    d1 = np.zeros_like(s0)
    if strict:
        above = t > s1
        mid = (t > s0) & ~above
    else:
        above = t >= s1
        mid = (t >= s0) & ~above
    F[above] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        e = s1 - s0
        F[mid] = ((t - s0) / e)[mid]
        d0[mid] = ((t - s1) / e**2)[mid]
        d1[mid] = (-(t - s0) / e**2)[mid]
    return F, d0, d1


def _band_fraction_simplex(vals):
    """Band fraction ``|{-1 < v < 1}|`` of a simplex and its derivative in the vertex values."""
    order = np.argsort(vals, axis=0, kind="stable")
    srt = np.take_along_axis(vals, order, axis=0)
    if vals.shape[0] == 2:
        hi = _fraction_below_1d(1.0, srt[0], srt[1], True)
        lo = _fraction_below_1d(-1.0, srt[0], srt[1], False)
    else:
        hi = _fraction_below(1.0, srt[0], srt[1], srt[2], True)
        lo = _fraction_below(-1.0, srt[0], srt[1], srt[2], False)
    frac = hi[0] - lo[0]
    dsrt = np.stack([a - b for a, b in zip(hi[1:], lo[1:])])
    dvals = np.empty_like(dsrt)
    np.put_along_axis(dvals, order, dsrt, axis=0)
    return frac, dvals


@dataclass
class _SimplexTable:
    """Vertex node indices of every simplex of the split lattice, by simplex type."""

    weight: list
    verts: list
    matrices: list


def _simplices(grid: Grid) -> _SimplexTable:
    if grid.dim == 1:
        (h,) = grid.spacing
        types = [(h, ((0,), (1,)), np.array([[-1.0 / h, 1.0 / h]]))]
    elif grid.dim == 2:
        hx, hy = grid.spacing
        types = []
        # two triangulations (both diagonals), each with weight 1/2
        for tri in (((0, 0), (1, 0), (1, 1)), ((0, 0), (0, 1), (1, 1)),
                    ((1, 0), (0, 0), (0, 1)), ((1, 0), (1, 1), (0, 1))):
            p = np.array(tri, dtype=float) * np.array([hx, hy])
            A = np.array([p[1] - p[0], p[2] - p[0]])
            M = np.linalg.solve(A, np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]))
            types.append((0.25 * hx * hy, tri, M))
    else:
        raise ConfigurationError("the sharp stage is implemented for 1D and 2D grids")
    idx = np.arange(grid.size).reshape(grid.shape)
    table = _SimplexTable([], [], [])
    for weight, offsets, M in types:
        table.weight.append(weight)
        table.verts.append(np.stack([_corner(idx, off).ravel() for off in offsets]))
        table.matrices.append(M)
    return table


def _corner(arr, offset):
    idx = tuple(slice(o, arr.shape[k] - 1 + o) for k, o in enumerate(offset))
    return arr[idx]


def sharp_energy(grid: Grid, v: np.ndarray, epsilon: float, table: _SimplexTable | None = None):
    """Exact ``J(clamp(v_h))`` for the simplicial interpolant ``v_h`` and its nodal gradient.

    Only simplices that meet the band ``{|v| < 1}`` contribute.
    """
    table = _simplices(grid) if table is None else table
    flat = v.ravel()
    total = 0.0
    grad = np.zeros(grid.size)
    for weight, verts, M in zip(table.weight, table.verts, table.matrices):
        vals = flat[verts]
        active = (vals.min(axis=0) < 1.0) & (vals.max(axis=0) > -1.0)
        if not active.any():
            continue
        vals = vals[:, active]
        G = M @ vals
        g2 = np.sum(G**2, axis=0)
        frac, dfrac = _band_fraction_simplex(vals)
        dens = epsilon * g2 + 1.0 / epsilon
        total += weight * float(np.sum(dens * frac))
        contrib = weight * (2.0 * epsilon * frac * (M.T @ G) + dens * dfrac)
        act_verts = verts[:, active]
        for k in range(verts.shape[0]):
            grad += np.bincount(act_verts[k], weights=contrib[k], minlength=grid.size)
    return total, grad.reshape(grid.shape)


def _extend_phase(grid: Grid, u: np.ndarray, epsilon: float) -> np.ndarray:
    """Initial ``v`` with ``clamp(v) = u``: clamped nodes continue with slope ``1/eps``."""
    band = in_band(u)
    v = u.copy()
    if not band.any():
        return np.sign(u) * 2.0 + (u == 0)
    dist = ndimage.distance_transform_edt(~band, sampling=grid.spacing)
    clamped = ~band
    v[clamped] = np.sign(u[clamped]) * (1.0 + (dist[clamped] - 0.5 * grid.h) / epsilon)
    return v


def sharp_stage(u: Field, config: SolverConfig, fixed, fixed_vals):
    """Monotone accelerated descent of the exact interpolant energy over ``v``."""
    grid = u.grid
    eps = config.epsilon
    table = _simplices(grid)
    w = node_weights(grid)
    v = _extend_phase(grid, u.values, eps)
    pinned = fixed & (np.abs(fixed_vals) < 1.0)
    plus = fixed & (fixed_vals >= 1.0)
    minus = fixed & (fixed_vals <= -1.0)

    def project(x):
        x = x.copy()
        x[pinned] = fixed_vals[pinned]
        x[plus] = np.maximum(x[plus], 1.0)
        x[minus] = np.minimum(x[minus], -1.0)
        return x

    def evaluate(x):
        val, gr = sharp_energy(grid, x, eps, table)
        gr = gr / w
        gr[pinned] = 0.0
        return val, gr

    v = project(v)
    tau0 = config.step(grid)
    value, grad = evaluate(v)
    history = [value]
    prev = v
    t_k = 1.0
    converged = False
    iters = 0
    slack = 1e-10
    for iters in range(1, config.max_iters + 1):
        trial = None
        if config.accelerate and t_k > 1.0:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
            y = project(v + ((t_k - 1.0) / t_next) * (v - prev))
            _, y_grad = evaluate(y)
            trial = project(y - tau0 * y_grad)
            t_value, t_grad = evaluate(trial)
            if t_value > value + slack * abs(value):
                trial = None
            else:
                t_k = t_next
        if trial is None:
            tau = tau0
            for _ in range(40):
                trial = project(v - tau * grad)
                t_value, t_grad = evaluate(trial)
                if t_value <= value + slack * abs(value):
                    break
                tau *= 0.5
            else:
                raise NumericalError("line search failed in the sharp stage")
            t_k = 2.0 if config.accelerate else 1.0
        moved = np.any(trial != v)
        prev, v, value, grad = v, trial, t_value, t_grad
        history.append(value)
        if not moved:
            converged = True
            break
        if iters >= config.window:
            ref = history[-config.window - 1]
            if ref - value <= config.energy_tol * max(abs(value), 1e-300):
                converged = True
                break
    u_out = np.clip(v, -1.0, 1.0)
    # values this close to +-1 are below the positional resolution of the stop rule
    snap = math.sqrt(config.energy_tol)
    u_out[u_out >= 1.0 - snap] = 1.0
    u_out[u_out <= -1.0 + snap] = -1.0
    return u_out, history, iters, converged


# --- harmonic band iteration -------------------------------------------------


def _neighbor_index(grid: Grid, axis: int, forward: bool) -> np.ndarray:
    """Flat index of each node's neighbour along ``axis`` (mirrored at the ends)."""
    idx = np.arange(grid.size).reshape(grid.shape)
    v = np.moveaxis(idx, axis, 0)
    if forward:
        nb = np.concatenate([v[1:], v[-2:-1]], axis=0)
    else:
        nb = np.concatenate([v[1:2], v[:-1]], axis=0)
    return np.moveaxis(nb, 0, axis)


def _solve_band_laplace(grid: Grid, band: np.ndarray, outside: np.ndarray) -> np.ndarray:
    """Discrete Laplace equation on ``band`` with ``outside`` values elsewhere.

    Domain-boundary faces without Dirichlet data get mirror (zero-flux) ghosts.
    """
    flat_band = band.ravel()
    nb_count = int(flat_band.sum())
    u = outside.ravel().astype(float).copy()
    if nb_count == 0:
        return u.reshape(grid.shape)
    unknown = -np.ones(grid.size, dtype=np.int64)
    unknown[flat_band] = np.arange(nb_count)
    rows_i = np.flatnonzero(flat_band)
    diag = np.zeros(nb_count)
    rhs = np.zeros(nb_count)
    rows, cols, vals = [], [], []
    for k, hk in enumerate(grid.spacing):
        c = 1.0 / hk**2
        for forward in (False, True):
            nb = _neighbor_index(grid, k, forward).ravel()[rows_i]
            diag += c
            nb_unknown = unknown[nb]
            is_unknown = nb_unknown >= 0
            rows.append(np.arange(nb_count)[is_unknown])
            cols.append(nb_unknown[is_unknown])
            vals.append(np.full(int(is_unknown.sum()), -c))
            rhs[~is_unknown] += c * u[nb[~is_unknown]]
    rows.append(np.arange(nb_count))
    cols.append(np.arange(nb_count))
    vals.append(diag)
    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nb_count, nb_count),
    )
    sol = spla.spsolve(A, rhs)
    u[rows_i] = sol
    return u.reshape(grid.shape)


def _band_laplacian_residual(grid: Grid, u: np.ndarray, band: np.ndarray) -> float:
    res = np.zeros(grid.size)
    flat = u.ravel()
    for k, hk in enumerate(grid.spacing):
        for forward in (False, True):
            nb = _neighbor_index(grid, k, forward).ravel()
            res += (flat[nb] - flat) / hk**2
    r = res.reshape(grid.shape)[band]
    return float(np.max(np.abs(r))) if r.size else 0.0


def _edge_gradient(grid: Grid, u: np.ndarray, band: np.ndarray):
    """Gradient magnitude at band nodes, one-sided toward any clamped neighbour."""
    g2 = np.zeros(grid.shape)
    edge = np.zeros(grid.shape, dtype=bool)
    for k, hk in enumerate(grid.spacing):
        v = np.moveaxis(u, k, 0)
        b = np.moveaxis(band, k, 0)
        n = v.shape[0]
        fwd = np.concatenate([(v[1:] - v[:-1]) / hk, np.zeros((1,) + v.shape[1:])])
        bwd = np.concatenate([np.zeros((1,) + v.shape[1:]), (v[1:] - v[:-1]) / hk])
        out_f = np.concatenate([~b[1:], np.zeros((1,) + b.shape[1:], bool)])
        out_b = np.concatenate([np.zeros((1,) + b.shape[1:], bool), ~b[:-1]])
        central = np.zeros_like(v)
        if n > 2:
            central[1:-1] = (v[2:] - v[:-2]) / (2 * hk)
        comp = np.where(out_f & ~out_b, fwd, np.where(out_b & ~out_f, bwd, central))
        both = out_f & out_b
        comp = np.where(both, np.where(np.abs(fwd) >= np.abs(bwd), fwd, bwd), comp)
        g2 += np.moveaxis(comp, 0, k) ** 2
        edge |= np.moveaxis(out_f | out_b, 0, k)
    return np.sqrt(g2), edge & band


def _face_dilate(mask: np.ndarray) -> np.ndarray:
    struct = ndimage.generate_binary_structure(mask.ndim, 1)
    return ndimage.binary_dilation(mask, structure=struct)


def harmonic_band_solve(config: SolverConfig, grid: Grid, band_init, signs=None,
                        init: Field | None = None, hysteresis: float = 0.05):
    """Fixed-point iteration for the discrete Bernoulli free boundary problem.

    Parameters
    ----------
    band_init : bool array or Field
        Initial transition band.  Nodes outside it are set to +-1.
    signs : array, optional
        Phase (+-1) of every node outside the band.  By default each
        connected component of the complement takes the sign of the
        Dirichlet data it contains.
    init : Field, optional
        Supplies the boundary values when ``config.boundary`` is ``"init"``.

    Each sweep solves the band Laplace problem exactly (sparse direct solve),
    then adds the clamped neighbours of edge nodes with ``eps |grad u| > 1 + hysteresis``
    to the band and removes edge nodes with ``eps |grad u| < 1 - hysteresis``.
    When growth and shrinkage touch, growth wins.  A band that repeats an
    earlier one stops the iteration with status ``"limit_cycle"``.
    """
    eps = config.epsilon
    band = np.asarray(band_init.values if isinstance(band_init, Field) else band_init, bool)
    if band.shape != grid.shape:
        raise InputError("band mask does not match grid")
    band = band.copy()
    if config.boundary.kind == "init" and init is None:
        raise ConfigurationError("boundary 'init' needs the init field")
    base = np.zeros(grid.shape) if init is None else init.values
    fixed, fixed_vals = config.boundary.resolve(grid, base)
    band &= ~fixed
    phase = _initial_phase(grid, band, fixed, fixed_vals, signs)
    trace = SolveTrace(method="harmonic_band")
    u = np.where(fixed, fixed_vals, np.where(band, 0.0, phase))
    tol = 1e-8 / grid.h**2

    status = "not_converged"
    seen = set()
    for it in range(config.max_band_iters):
        key = band.tobytes()
        if key in seen:
            status = "limit_cycle"
            break
        seen.add(key)
        if not band.any():
            status = "collapsed"
            break
        outside = np.where(fixed, fixed_vals, phase)
        if _phases_touch(band, outside):
            status = "disconnected"
            break
        u = _solve_band_laplace(grid, band, np.where(band, 0.0, outside))
        res = _band_laplacian_residual(grid, u, band)
        if res > tol:
            raise NumericalError(f"band Laplace residual {res:.3e} above tolerance")
        gmag, edge = _edge_gradient(grid, u, band)
        scaled = eps * gmag
        steep = edge & (scaled > 1.0 + hysteresis)
        shallow = edge & (scaled < 1.0 - hysteresis)
        grow = _face_dilate(steep) & ~band & ~fixed & (np.abs(u) >= 1.0)
        shrink = shallow & ~_face_dilate(grow)
        moves = int(grow.sum() + shrink.sum())
        trace.edge_moves.append(moves)
        if moves == 0:
            status = "converged"
            break
        # removed nodes join the phase they are closest to
        phase = np.where(shrink, np.where(u >= 0, 1.0, -1.0), phase)
        band = (band | grow) & ~shrink
    trace.status = status
    if status != "converged":
        trace.message = f"band iteration stopped: {status}"
    out = Field(grid, np.clip(u, -1.0, 1.0))
    trace.final = energy(out, eps)
    trace.stationarity_residual = stationarity_residual(out, eps)
    return out, trace


def _initial_phase(grid, band, fixed, fixed_vals, signs):
    if signs is not None:
        s = np.asarray(signs.values if isinstance(signs, Field) else signs, dtype=float)
        return np.where(s >= 0, 1.0, -1.0)
    struct = ndimage.generate_binary_structure(grid.dim, 1)
    labels, n = ndimage.label(~band, structure=struct)
    phase = np.ones(grid.shape)
    for lab in range(1, n + 1):
        comp = labels == lab
        vals = fixed_vals[comp & fixed]
        vals = vals[np.abs(vals) >= 1.0]
        if vals.size == 0:
            raise InputError("a phase region carries no Dirichlet data; pass signs explicitly")
        if np.any(vals > 0) and np.any(vals < 0):
            raise InputError("band does not separate the +1 and -1 Dirichlet regions")
        phase[comp] = 1.0 if vals[0] > 0 else -1.0
    return phase


def _phases_touch(band, outside) -> bool:
    plus = ~band & (outside >= 1.0)
    minus = ~band & (outside <= -1.0)
    return bool(np.any(_face_dilate(plus) & minus))


# --- profiles ----------------------------------------------------------------


def _unit(normal, dim) -> np.ndarray:
    n = np.asarray(normal, dtype=float).reshape(-1)
    if n.size != dim:
        raise ConfigurationError("normal dimension does not match grid")
    norm = np.linalg.norm(n)
    if not math.isclose(norm, 1.0, rel_tol=1e-9):
        raise ConfigurationError(f"normal must be a unit vector, |n| = {norm}")
    return n


def _height(grid: Grid, normal) -> np.ndarray:
    n = _unit(normal, grid.dim)
    return sum(n[k] * x for k, x in enumerate(grid.mesh()))


def exact_profile(grid: Grid, epsilon: float, normal=None, offset: float = 0.0) -> Field:
    """``clamp((x . normal - offset) / eps, -1, 1)`` at the nodes."""
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be positive")
    if normal is None:
        normal = np.eye(grid.dim)[-1]
    s = _height(grid, normal) - offset
    return Field(grid, np.clip(s / epsilon, -1.0, 1.0))


def multi_sheet_profile(grid: Grid, epsilon: float, offsets, signs=None, normal=None) -> Field:
    """Piecewise profile with one ramp of width ``2 eps`` per offset.

    ``signs[k] = +1`` means the field increases across sheet ``k``; signs must
    alternate so the field is ``+-1`` between sheets.  Consecutive offsets
    must be more than ``4 eps`` apart.
    """
    offsets = [float(o) for o in offsets]
    if not offsets:
        raise InputError("at least one sheet offset is required")
    if signs is None:
        signs = [1 if k % 2 == 0 else -1 for k in range(len(offsets))]
    signs = [1 if s > 0 else -1 for s in signs]
    if len(signs) != len(offsets):
        raise InputError("need one sign per offset")
    for a, b in zip(offsets, offsets[1:]):
        if b - a <= 4.0 * epsilon:
            raise InputError(f"sheets at {a} and {b} are closer than 4*eps; bands overlap")
    for a, b in zip(signs, signs[1:]):
        if a == b:
            raise InputError("sheet signs must alternate")
    if normal is None:
        normal = np.eye(grid.dim)[-1]
    height = _height(grid, normal)
    u = np.full(grid.shape, -float(signs[0]))
    for off, s in zip(offsets, signs):
        u += s * (np.clip((height - off) / epsilon, -1.0, 1.0) + 1.0)
    return Field(grid, np.clip(u, -1.0, 1.0))


# --- first variation ---------------------------------------------------------


def first_variation(u: Field, epsilon: float, g: VectorField, check_support: bool = True) -> float:
    """Discrete first variation of the energy along the vector field ``g``.

    ``int_{|u|<1} -2 eps grad u . (Dg grad u) + eps |grad u|^2 div g + div g / eps``
    """
    if check_support and not g.vanishes_on_boundary():
        raise InputError("test vector field must vanish on the domain boundary")
    du = gradient(u).components
    Dg = jacobian(g)
    divg = divergence(g)
    # grad u . (Dg grad u) = sum_ij du_i Dg_ij du_j
    quad = np.einsum("i...,ij...,j...->...", du, Dg, du)
    g2 = np.sum(du**2, axis=0)
    integrand = -2.0 * epsilon * quad + epsilon * g2 * divg + divg / epsilon
    return integrate(integrand, in_band(u.values), grid=u.grid)


def bump(grid: Grid, center, radius: float) -> np.ndarray:
    """Smooth compactly supported bump ``exp(1 - 1/(1 - |x-c|^2/r^2))``, peak 1."""
    c = np.asarray(center, dtype=float)
    r2 = sum((x - c[k]) ** 2 for k, x in enumerate(grid.mesh())) / radius**2
    out = np.zeros(grid.shape)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def bump_field(grid: Grid, center, radius: float, direction) -> VectorField:
    d = np.asarray(direction, dtype=float)
    phi = bump(grid, center, radius)
    return VectorField(grid, np.stack([d[k] * phi for k in range(grid.dim)]))


# fractional centres of the fixed test basis (2D); other dimensions reuse the pattern
_BASIS_CENTRES = [(0.5, 0.5), (0.35, 0.45), (0.65, 0.55), (0.4, 0.62), (0.6, 0.38)]


def bump_basis(grid: Grid, count: int = 10) -> list[VectorField]:
    """Fixed family of ``count`` bump vector fields supported inside the domain."""
    lo = np.array([e[0] for e in grid.extents])
    span = np.array([e[1] - e[0] for e in grid.extents])
    radius = 0.25 * float(span.min())
    fields = []
    k = 0
    while len(fields) < count:
        frac = _BASIS_CENTRES[(k // grid.dim) % len(_BASIS_CENTRES)]
        frac = np.array([frac[j % 2] + 0.02 * (j // 2) for j in range(grid.dim)])
        if grid.dim == 1:
            frac = np.array([0.3 + 0.4 * (k % count) / max(count - 1, 1)])
        direction = np.eye(grid.dim)[k % grid.dim]
        fields.append(bump_field(grid, lo + frac * span, radius, direction))
        k += 1
    return fields


def c1_norm(g: VectorField) -> float:
    return float(np.max(g.norm()) + np.max(np.sqrt(np.sum(jacobian(g) ** 2, axis=(0, 1)))))


def stationarity_residual(u: Field, epsilon: float, basis=None) -> float:
    """``max_g |dJ(u)[g]| / ||g||_C1`` over the fixed bump basis."""
    basis = bump_basis(u.grid) if basis is None else basis
    return max(abs(first_variation(u, epsilon, g)) / c1_norm(g) for g in basis)


def hessian_max(u: Field) -> float:
    """Largest entry of the finite-difference Hessian; measured, never enforced."""
    du = gradient(u)
    return float(np.max(np.abs(jacobian(du))))
