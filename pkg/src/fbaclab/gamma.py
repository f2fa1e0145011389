"""Recovery sequences and Gamma-convergence audits against the perimeter."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .energy import cs_lower_bound_check, energy, in_band
from .errors import ConfigurationError, InputError
from .geometry import InterfaceMesh, extract_level_set
from .grid import Field, Grid, gradient, integrate

__all__ = [
    "PhaseShape",
    "ShapeSpec",
    "AuditTable",
    "TransferReport",
    "half_plane",
    "disc",
    "square",
    "graph_shape",
    "shape_from_indicator",
    "signed_distance",
    "recovery_sequence",
    "perimeter",
    "l1_distance",
    "gamma_limsup_audit",
    "gamma_liminf_audit",
    "threshold_limit",
    "local_min_transfer_audit",
]

# blur (in nodes) applied to a bare indicator before extracting its midlevel
_INDICATOR_BLUR = 2.0


@dataclass
class PhaseShape:
    """Phase set ``A`` as a +-1 indicator (``+1`` on ``A``).

    ``level_set`` optionally gives a smooth function negative on ``A`` whose
    zero set is the interface; it is used for accurate extraction.
    """

    indicator: Field
    analytic_perimeter: float | None = None
    description: str = ""
    level_set: np.ndarray | None = None

    def __post_init__(self):
        vals = self.indicator.values
        if not np.all((vals == 1.0) | (vals == -1.0)):
            raise InputError("indicator must take only the values -1 and +1")
        if self.analytic_perimeter is not None and not self.analytic_perimeter > 0:
            raise InputError("analytic perimeter must be positive")
        if self.level_set is not None:
            self.level_set = np.asarray(self.level_set, dtype=float).reshape(self.grid.shape)

    @property
    def grid(self) -> Grid:
        return self.indicator.grid

    @property
    def two_phase(self) -> bool:
        vals = self.indicator.values
        return bool(vals.min() < 0 < vals.max())

    def __neg__(self) -> "PhaseShape":
        ls = None if self.level_set is None else -self.level_set
        return PhaseShape(-self.indicator, self.analytic_perimeter,
                          f"complement of {self.description}".strip(), ls)


def _from_level_set(grid: Grid, phi: np.ndarray, perim, description) -> PhaseShape:
    ind = np.where(phi < 0, 1.0, -1.0)
    return PhaseShape(Field(grid, ind), perim, description, phi)


def _box(grid):
    lo = np.array([e[0] for e in grid.extents])
    hi = np.array([e[1] for e in grid.extents])
    return lo, hi


def half_plane(grid: Grid, normal, offset: float) -> PhaseShape:
    """``A = {x . n < offset}``."""
    n = np.asarray(normal, dtype=float)
    if n.shape != (grid.dim,) or np.linalg.norm(n) == 0:
        raise ConfigurationError("normal must be a non-zero vector of the grid dimension")
    n = n / np.linalg.norm(n)
    phi = sum(n[k] * x for k, x in enumerate(grid.mesh())) - offset
    perim = None
    axes = np.flatnonzero(np.abs(n) > 0)
    if len(axes) == 1:
        k = int(axes[0])
        lo, hi = _box(grid)
        if lo[k] < offset * np.sign(n[k]) < hi[k]:
            perim = float(np.prod(np.delete(hi - lo, k))) if grid.dim > 1 else 1.0
    return _from_level_set(grid, phi, perim, f"half_plane n={n.tolist()} c={offset}")


def disc(grid: Grid, center, radius: float) -> PhaseShape:
    """Ball ``|x - c| < R``; the analytic perimeter is set when the ball is inside the domain."""
    c = np.asarray(center, dtype=float)
    if radius <= 0:
        raise ConfigurationError("radius must be positive")
    phi = np.sqrt(sum((x - c[k]) ** 2 for k, x in enumerate(grid.mesh()))) - radius
    perim = None
    if grid.distance_to_boundary(c) > radius:
        perim = {1: 2.0, 2: 2 * math.pi * radius, 3: 4 * math.pi * radius**2}[grid.dim]
    return _from_level_set(grid, phi, perim, f"disc c={c.tolist()} R={radius}")


def square(grid: Grid, center, side: float) -> PhaseShape:
    """Axis-aligned cube of edge ``side``."""
    c = np.asarray(center, dtype=float)
    if side <= 0:
        raise ConfigurationError("side must be positive")
    dev = np.stack([np.abs(x - c[k]) for k, x in enumerate(grid.mesh())])
    phi = dev.max(axis=0) - side / 2
    perim = None
    if grid.distance_to_boundary(c) > side / 2:
        perim = 2.0 * grid.dim * side ** (grid.dim - 1)
    return _from_level_set(grid, phi, perim, f"square c={c.tolist()} s={side}")


def graph_shape(grid: Grid, func: Callable, description: str = "graph") -> PhaseShape:
    """``A = {x_last < f(x_0, ..., x_{n-2})}``: the region below a graph."""
    mesh = grid.mesh()
    phi = mesh[-1] - func(*mesh[:-1])
    return _from_level_set(grid, phi, None, description)


def shape_from_indicator(u: Field, description: str = "indicator") -> PhaseShape:
    return PhaseShape(Field(u.grid, np.where(u.values >= 0, 1.0, -1.0)), None, description)


@dataclass(frozen=True)
class ShapeSpec:
    """Grid-independent description of a shape, rebuilt on each audit grid."""

    kind: str
    params: tuple = ()

    def build(self, grid: Grid) -> PhaseShape:
        p = dict(self.params)
        if self.kind == "half_plane":
            return half_plane(grid, p["normal"], p["offset"])
        if self.kind == "disc":
            return disc(grid, p["center"], p["radius"])
        if self.kind == "square":
            return square(grid, p["center"], p["side"])
        raise ConfigurationError(f"unknown shape kind {self.kind!r}")

    @classmethod
    def make(cls, kind: str, **params) -> "ShapeSpec":
        frozen = tuple(sorted((k, tuple(v) if isinstance(v, (list, np.ndarray)) else v)
                              for k, v in params.items()))
        return cls(kind, frozen)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: (list(v) if isinstance(v, tuple) else v)
                                      for k, v in self.params}}


def interface_of(shape: PhaseShape) -> InterfaceMesh:
    """Interface mesh from the level set if present, else from the blurred indicator."""
    if shape.level_set is not None:
        return extract_level_set(Field(shape.grid, shape.level_set, "free"), 0.0)
    blurred = ndimage.gaussian_filter(-shape.indicator.values, _INDICATOR_BLUR, mode="nearest")
    return extract_level_set(Field(shape.grid, blurred, "free"), 0.0)


def perimeter(shape: PhaseShape) -> float:
    """Length (2D), area (3D) or point count (1D) of the interface; 0 for one phase."""
    if not shape.two_phase:
        return 0.0
    mesh = interface_of(shape)
    return 0.0 if mesh.empty else float(mesh.length_or_area)


# --- exact distance to interface elements ------------------------------------


def _segment_distance(p, a, b):
    ab = b - a
    denom = np.sum(ab * ab, axis=-1)
    t = np.sum((p - a) * ab, axis=-1) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    q = a + t[..., None] * ab
    return np.sqrt(np.sum((p - q) ** 2, axis=-1))


def _triangle_distance(p, a, b, c):
    """Exact point-triangle distance (closest-point region tests), vectorized."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = p - b
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = p - c
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    # interior projection by default
    denom = va + vb + vc
    denom = np.where(denom != 0, denom, 1.0)
    v = vb / denom
    w = vc / denom
    q = a + v[..., None] * ab + w[..., None] * ac
    with np.errstate(invalid="ignore", divide="ignore"):
        # edge regions
        on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = np.where(on_ab, d1 / np.where(d1 - d3 != 0, d1 - d3, 1.0), 0.0)
        q = np.where(on_ab[..., None], a + t[..., None] * ab, q)
        on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = np.where(on_ac, d2 / np.where(d2 - d6 != 0, d2 - d6, 1.0), 0.0)
        q = np.where(on_ac[..., None], a + t[..., None] * ac, q)
        on_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        den = (d4 - d3) + (d5 - d6)
        t = np.where(on_bc, (d4 - d3) / np.where(den != 0, den, 1.0), 0.0)
        q = np.where(on_bc[..., None], b + t[..., None] * (c - b), q)
    # vertex regions
    q = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, q)
    q = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, q)
    q = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, q)
    return np.sqrt(np.sum((p - q) ** 2, axis=-1))


def _element_distance(mesh: InterfaceMesh, pts, elem_idx):
    """Distances from ``pts[:, None]`` to elements ``elem_idx`` (shape (m, k))."""
    v = mesh.vertices
    e = mesh.elements[elem_idx]
    p = pts[:, None, :]
    if mesh.dim == 1:
        return _segment_distance(p, v[e[..., 0]], v[e[..., 1]])
    return _triangle_distance(p, v[e[..., 0]], v[e[..., 1]], v[e[..., 2]])


def distance_to_interface(mesh: InterfaceMesh, pts: np.ndarray, chunk: int = 20000) -> np.ndarray:
    """Exact Euclidean distance from each point to the union of interface elements.

    Candidate elements come from the nearest centroids; the result is
    certified when it does not exceed (k-th centroid distance - element
    radius), otherwise the point is checked against every element.
    """
    if mesh.dim == 0:
        d, _ = cKDTree(mesh.vertices).query(pts, k=1)
        return d
    v, e = mesh.vertices, mesh.elements
    cent = v[e].mean(axis=1)
    rad = float(np.max(np.linalg.norm(v[e] - cent[:, None, :], axis=-1)))
    tree = cKDTree(cent)
    k = min(64, len(e))
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        dk, idx = tree.query(p, k=k)
        idx = np.asarray(idx).reshape(len(p), k)
        dk = np.asarray(dk).reshape(len(p), k)
        best = _element_distance(mesh, p, idx).min(axis=1)
        if k < len(e):
            bad = best > dk[:, -1] - rad
            if bad.any():
                allidx = np.arange(len(e))
                sub = np.flatnonzero(bad)
                for t in range(0, len(sub), 256):
                    rows = sub[t:t + 256]
                    full = _element_distance(
                        mesh, p[rows], np.broadcast_to(allidx, (len(rows), len(e)))
                    )
                    best[rows] = full.min(axis=1)
        out[s:s + chunk] = best
    return out


def signed_distance(shape: PhaseShape) -> tuple[Field, bool]:
    """Signed distance to the interface, negative inside ``A``.

    Returns ``(d, has_interface)``.  For a single-phase shape ``d`` is the
    constant sentinel ``+inf`` (or ``-inf`` if the phase is ``A``) and
    ``has_interface`` is False.
    """
    grid = shape.grid
    inside = shape.indicator.values > 0
    if not shape.two_phase:
        val = -np.inf if inside.all() else np.inf
        return Field(grid, np.full(grid.shape, val), "free"), False
    mesh = interface_of(shape)
    if mesh.empty:
        val = -np.inf if inside.all() else np.inf
        return Field(grid, np.full(grid.shape, val), "free"), False
    d = distance_to_interface(mesh, grid.points()).reshape(grid.shape)
    return Field(grid, np.where(inside, -d, d), "free"), True


def recovery_sequence(shape: PhaseShape, epsilon: float) -> Field:
    """``clamp(-d / eps)``: ``+1`` inside ``A``, linear across a band of width ``2 eps``."""
    h = shape.grid.h
    if not epsilon > 2.0 * h:
        raise ConfigurationError(f"epsilon {epsilon} must exceed 2h = {2 * h}")
    d, _ = signed_distance(shape)
    with np.errstate(invalid="ignore"):
        vals = np.clip(-d.values / epsilon, -1.0, 1.0)
    return Field(shape.grid, vals)


def l1_distance(u, v) -> float:
    a = u.indicator if isinstance(u, PhaseShape) else u
    b = v.indicator if isinstance(v, PhaseShape) else v
    if a.grid != b.grid:
        raise InputError("fields live on different grids")
    return integrate(np.abs(a.values - b.values), grid=a.grid)


# --- audits -------------------------------------------------------------------


@dataclass
class AuditTable:
    columns: list
    rows: list = field(default_factory=list)
    verdict: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"columns": self.columns, "rows": self.rows,
                           "verdict": self.verdict}, indent=1)

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]


def gamma_limsup_audit(spec: ShapeSpec, epsilon_list, extents, h_ratio: float = 8.0,
                       final_cap: float = 0.05) -> AuditTable:
    """Energy of recovery sequences against ``4 * perimeter`` on grids with ``h = eps / h_ratio``.

    The verdict asks for a relative gap non-increasing across the last two
    halvings and at most ``final_cap`` at the smallest epsilon.
    """
    eps_list = [float(e) for e in epsilon_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigurationError("epsilon list must be decreasing")
    table = AuditTable(["epsilon", "h", "energy", "target", "relative_gap"])
    for eps in eps_list:
        grid = Grid.from_spacing(extents, eps / h_ratio)
        shape = spec.build(grid)
        per = shape.analytic_perimeter if shape.analytic_perimeter else perimeter(shape)
        u = recovery_sequence(shape, eps)
        J = energy(u, eps).total
        target = 4.0 * per
        table.rows.append([eps, grid.h, J, target, abs(J - target) / target])
    gaps = table.column("relative_gap")
    tail = gaps[-3:]
    table.verdict = {
        "final_gap": gaps[-1],
        "final_within_cap": bool(gaps[-1] <= final_cap),
        # roundoff allowance only; the trend itself is not relaxed
        "non_increasing": bool(all(b <= a * (1 + 1e-12) for a, b in zip(tail, tail[1:]))),
    }
    table.verdict["passed"] = table.verdict["final_within_cap"] and table.verdict["non_increasing"]
    return table


def gamma_liminf_audit(u_list, epsilon_list, u0: PhaseShape) -> AuditTable:
    """``J_eps(u_k)`` against ``2 int_band |grad u_k|`` and ``J_0(u_0) = 4 * perimeter``.

    The Cauchy-Schwarz inequality is asserted through the pointwise margin;
    the gap to ``J_0`` is only reported.  All fields must share ``u0``'s grid.
    """
    u_list = list(u_list)
    eps_list = [float(e) for e in epsilon_list]
    if len(u_list) != len(eps_list):
        raise InputError("need one epsilon per field")
    per = u0.analytic_perimeter if u0.analytic_perimeter else perimeter(u0)
    J0 = 4.0 * per
    table = AuditTable(["epsilon", "energy", "bv_term", "j0", "l1_to_u0", "cs_margin", "cs_holds"])
    for u, eps in zip(u_list, eps_list):
        J = energy(u, eps).total
        g = gradient(u).norm()
        bv = 2.0 * integrate(g, in_band(u.values), grid=u.grid)
        holds, margin = cs_lower_bound_check(u, eps)
        table.rows.append([eps, J, bv, J0, l1_distance(u, u0), margin, holds])
    l1 = table.column("l1_to_u0")
    table.verdict = {
        "cs_all_hold": bool(all(table.column("cs_holds"))),
        "l1_decreasing": bool(all(b < a for a, b in zip(l1, l1[1:]))),
        "final_gap_to_j0": (table.rows[-1][1] - J0) / J0 if table.rows else None,
    }
    table.verdict["passed"] = table.verdict["cs_all_hold"]
    return table


def threshold_limit(u: Field) -> tuple[PhaseShape, float]:
    """``u0 = +1`` where ``u >= 0`` and ``-1`` elsewhere, with ``||u - u0||_L1``."""
    shape = shape_from_indicator(u, "threshold limit")
    return shape, l1_distance(u, shape.indicator)


@dataclass
class TransferReport:
    reference_j0: float
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r["status"] != "fail" for r in self.rows)

    def to_dict(self) -> dict:
        return {"reference_j0": self.reference_j0, "rows": self.rows, "notes": self.notes,
                "passed": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def local_min_transfer_audit(u0: PhaseShape, perturbations, c: float,
                             rtol: float = 1e-9) -> TransferReport:
    """Check ``J_0(u0) <= J_0(p)`` for each perturbation within L1 distance ``c``.

    Perturbations farther than ``c`` are skipped with a note.  A failure is
    reported in the rows, not raised.
    """
    ref = 4.0 * perimeter(u0)
    rep = TransferReport(ref)
    for k, p in enumerate(perturbations):
        dist = l1_distance(u0, p)
        if dist > c:
            rep.rows.append({"index": k, "l1": dist, "j0": None, "status": "skipped"})
            rep.notes.append(f"perturbation {k} lies outside the L1 ball (distance {dist:.4g} > {c})")
            continue
        j0 = 4.0 * perimeter(p)
        ok = ref <= j0 * (1.0 + rtol)
        rep.rows.append({"index": k, "l1": dist, "j0": j0, "status": "pass" if ok else "fail",
                         "description": p.description})
    return rep
