"""Interface extraction, transition bands, Hausdorff distances and components."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .energy import BAND_TOL, in_band
from .errors import ConfigurationError, InputError
from .grid import Field, Grid

__all__ = [
    "InterfaceMesh",
    "Component",
    "ComponentReport",
    "extract_level_set",
    "transition_band",
    "hausdorff",
    "directed_hausdorff",
    "as_points",
    "connected_components",
    "sliver_audit",
    "SLIVER_DELTA",
    "TOL_BAND",
]

TOL_BAND = BAND_TOL

# Sliver threshold: components with volume below SLIVER_DELTA * eps^(n-1) * h are
# flagged.  Converged flat-data runs produce no component below 100x this value.
SLIVER_DELTA = 1.0


@dataclass
class InterfaceMesh:
    """Level set ``{u = t}`` as points (1D grids), a polyline (2D) or a triangle soup (3D).

    ``dim`` is the dimension of the interface itself (0, 1 or 2).
    """

    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    length_or_area: float
    level: float = 0.0
    in_range: bool = True

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        if self.elements.size and (
            self.elements.min() < 0 or self.elements.max() >= len(self.vertices)
        ):
            raise InputError("interface element references a missing vertex")

    @property
    def empty(self) -> bool:
        return len(self.vertices) == 0

    def element_measures(self) -> np.ndarray:
        return _element_measures(self.dim, self.vertices, self.elements)

    def sample_points(self, spacing: float) -> np.ndarray:
        """Vertices plus evenly spaced points along each element (1D interfaces only)."""
        if self.dim != 1 or self.empty:
            return self.vertices.copy()
        pts = [self.vertices]
        for a, b in self.elements:
            p, q = self.vertices[a], self.vertices[b]
            k = int(np.ceil(np.linalg.norm(q - p) / spacing))
            if k > 1:
                s = (np.arange(1, k) / k)[:, None]
                pts.append(p + s * (q - p))
        return np.concatenate(pts)

    def write_csv(self, vertex_path, element_path) -> None:
        d = self.vertices.shape[1] if self.vertices.ndim == 2 else 1
        header = ",".join(["index"] + [f"coord_{k + 1}" for k in range(d)])
        rows = [header] + [
            ",".join([str(i)] + [repr(float(x)) for x in np.atleast_1d(v)])
            for i, v in enumerate(self.vertices)
        ]
        Path(vertex_path).write_text("\n".join(rows) + "\n")
        m = self.elements.shape[1] if self.elements.ndim == 2 else 1
        header = ",".join(["index"] + [f"v{k}" for k in range(m)])
        rows = [header] + [
            ",".join([str(i)] + [str(int(x)) for x in np.atleast_1d(e)])
            for i, e in enumerate(self.elements)
        ]
        Path(element_path).write_text("\n".join(rows) + "\n")


def _element_measures(dim, vertices, elements):
    if len(elements) == 0:
        return np.zeros(0)
    if dim == 0:
        return np.ones(len(elements))
    if dim == 1:
        a, b = vertices[elements[:, 0]], vertices[elements[:, 1]]
        return np.linalg.norm(b - a, axis=1)
    a, b, c = (vertices[elements[:, k]] for k in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _empty_mesh(grid: Grid, t: float, in_range: bool) -> InterfaceMesh:
    dim = grid.dim - 1
    return InterfaceMesh(dim, np.zeros((0, grid.dim)), np.zeros((0, dim + 1), np.int64),
                         0.0, t, in_range)


def extract_level_set(u, t: float = 0.0) -> InterfaceMesh:
    """Piecewise-linear level set ``{u = t}``.

    2D uses marching squares with the cell-centre average deciding saddle
    cells; 3D uses marching cubes.  On a 1D grid the crossing points are
    returned and ``length_or_area`` is their count.  If ``t`` is not strictly
    between the extreme values of ``u`` the mesh is empty and ``in_range`` is
    False.
    """
    grid = u.grid
    vals = u.values
    if not (vals.min() < t < vals.max()):
        return _empty_mesh(grid, t, False)
    if grid.dim == 1:
        return _crossings_1d(grid, vals, t)
    if grid.dim == 2:
        return _marching_squares(grid, vals, t)
    return _marching_cubes(grid, vals, t)


def _crossings_1d(grid, vals, t):
    x = grid.axis(0)
    s = vals >= t
    idx = np.flatnonzero(s[1:] != s[:-1])
    a, b = vals[idx], vals[idx + 1]
    pts = x[idx] + (t - a) / (b - a) * (x[idx + 1] - x[idx])
    verts = pts.reshape(-1, 1)
    elems = np.arange(len(pts)).reshape(-1, 1)
    return InterfaceMesh(0, verts, elems, float(len(pts)), t)


# marching squares: corners 0=(i,j) 1=(i+1,j) 2=(i+1,j+1) 3=(i,j+1);
# edges 0=bottom(0-1) 1=right(1-2) 2=top(3-2) 3=left(0-3).
_MS_SEGMENTS = {
    0: [], 15: [],
    1: [(3, 0)], 14: [(3, 0)],
    2: [(0, 1)], 13: [(0, 1)],
    3: [(3, 1)], 12: [(3, 1)],
    4: [(1, 2)], 11: [(1, 2)],
    6: [(0, 2)], 9: [(0, 2)],
    7: [(3, 2)], 8: [(3, 2)],
}


def _marching_squares(grid, vals, t):
    nx, ny = grid.shape
    x, y = grid.axis(0), grid.axis(1)
    inside = vals >= t

    # one vertex per crossed lattice edge; ids assigned in row-major edge order
    hx_cross = inside[1:, :] != inside[:-1, :]  # edge (i,j)-(i+1,j)
    vy_cross = inside[:, 1:] != inside[:, :-1]  # edge (i,j)-(i,j+1)
    h_id = -np.ones((nx - 1, ny), np.int64)
    v_id = -np.ones((nx, ny - 1), np.int64)
    nh = int(hx_cross.sum())
    h_id[hx_cross] = np.arange(nh)
    v_id[vy_cross] = nh + np.arange(int(vy_cross.sum()))

    hi, hj = np.nonzero(hx_cross)
    a, b = vals[hi, hj], vals[hi + 1, hj]
    hx_pts = np.stack([x[hi] + (t - a) / (b - a) * (x[hi + 1] - x[hi]), y[hj]], axis=1)
    vi, vj = np.nonzero(vy_cross)
    a, b = vals[vi, vj], vals[vi, vj + 1]
    vy_pts = np.stack([x[vi], y[vj] + (t - a) / (b - a) * (y[vj + 1] - y[vj])], axis=1)
    verts = np.concatenate([hx_pts, vy_pts]).reshape(-1, 2)

    code = (
        inside[:-1, :-1].astype(int)
        | (inside[1:, :-1].astype(int) << 1)
        | (inside[1:, 1:].astype(int) << 2)
        | (inside[:-1, 1:].astype(int) << 3)
    )
    edge_ids = np.stack([h_id[:, :-1], v_id[1:, :], h_id[:, 1:], v_id[:-1, :]])
    centre = 0.25 * (vals[:-1, :-1] + vals[1:, :-1] + vals[1:, 1:] + vals[:-1, 1:]) >= t

    segs = []
    ci, cj = np.nonzero((code != 0) & (code != 15))
    for i, j in zip(ci, cj):  # row-major cell order
        c = int(code[i, j])
        if c in (5, 10):
            # saddle: cut off the two corners whose phase differs from the centre
            cut_odd = (c == 5) == bool(centre[i, j])
            pairs = [(0, 1), (3, 2)] if cut_odd else [(3, 0), (1, 2)]
        else:
            pairs = _MS_SEGMENTS[c]
        for e0, e1 in pairs:
            segs.append((edge_ids[e0, i, j], edge_ids[e1, i, j]))
    elems = np.array(segs, dtype=np.int64).reshape(-1, 2)
    length = float(np.sum(_element_measures(1, verts, elems)))
    return InterfaceMesh(1, verts, elems, length, t)


def _marching_cubes(grid, vals, t):
    from skimage.measure import marching_cubes

    verts, faces, _, _ = marching_cubes(vals, level=t, spacing=grid.spacing, method="lewiner")
    verts = verts + np.array([lo for lo, _ in grid.extents])
    area = float(np.sum(_element_measures(2, verts, faces)))
    return InterfaceMesh(2, verts, faces.astype(np.int64), area, t)


def transition_band(u: Field) -> np.ndarray:
    """Nodes with ``|u| < 1 - TOL_BAND``."""
    return in_band(u.values)


def as_points(obj, grid: Grid | None = None) -> np.ndarray:
    """Point set from an ``(k, dim)`` array, an :class:`InterfaceMesh`, or a mask with its grid."""
    if isinstance(obj, InterfaceMesh):
        return obj.vertices
    if isinstance(obj, Field):
        grid, obj = obj.grid, obj.values != 0
    arr = np.asarray(obj)
    if arr.dtype == bool:
        if grid is None:
            raise ConfigurationError("a node mask needs its grid")
        if arr.shape != grid.shape:
            raise ConfigurationError("mask shape does not match grid")
        return grid.points()[arr.ravel()]
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def directed_hausdorff(a, b, grid: Grid | None = None) -> float:
    """``max_{p in a} min_{q in b} |p - q|`` with exact nearest neighbours."""
    pa, pb = as_points(a, grid), as_points(b, grid)
    if len(pa) == 0 or len(pb) == 0:
        raise InputError("Hausdorff distance of an empty set is undefined")
    d, _ = cKDTree(pb).query(pa, k=1)
    return float(np.max(d))


def hausdorff(a, b, grid: Grid | None = None) -> float:
    """Symmetric Hausdorff distance between two point sets (or masks on ``grid``)."""
    return max(directed_hausdorff(a, b, grid), directed_hausdorff(b, a, grid))


@dataclass
class Component:
    label: int
    node_count: int
    volume: float
    bbox_lo: list
    bbox_hi: list


@dataclass
class ComponentReport:
    components: list = field(default_factory=list)
    cell_volume: float = 0.0

    @property
    def count(self) -> int:
        return len(self.components)

    @property
    def volumes(self) -> list:
        return [c.volume for c in self.components]

    def total_volume(self) -> float:
        return float(sum(self.volumes))

    def to_dict(self) -> dict:
        return {"cell_volume": self.cell_volume, "components": [asdict(c) for c in self.components]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def connected_components(mask, grid: Grid) -> ComponentReport:
    """Face-connected components, labelled in row-major order of their first node."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.shape:
        raise ConfigurationError("mask shape does not match grid")
    structure = ndimage.generate_binary_structure(grid.dim, 1)
    labels, n = ndimage.label(mask, structure=structure)
    report = ComponentReport(cell_volume=grid.cell_volume)
    if n == 0:
        return report
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    slices = ndimage.find_objects(labels)
    for lab in range(1, n + 1):
        sl = slices[lab - 1]
        lo = [float(grid.axis(k)[s.start]) for k, s in enumerate(sl)]
        hi = [float(grid.axis(k)[s.stop - 1]) for k, s in enumerate(sl)]
        report.components.append(
            Component(lab, int(counts[lab]), float(counts[lab]) * grid.cell_volume, lo, hi)
        )
    return report


def sliver_audit(report: ComponentReport, epsilon: float, h: float, dim: int,
                 delta: float = SLIVER_DELTA) -> list:
    """Components whose volume is below ``delta * eps^(dim-1) * h``."""
    threshold = delta * epsilon ** (dim - 1) * h
    return [c for c in report.components if c.volume < threshold]
