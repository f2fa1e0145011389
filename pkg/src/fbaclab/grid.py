"""Structured rectangular grids, nodal fields and finite-difference calculus.

Arrays are stored with ``indexing="ij"``: axis ``k`` of ``Field.values``
runs along coordinate ``k``.  Flattening is always row-major (C order),
which is also the lexicographic node order used for reductions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputError

__all__ = [
    "Grid",
    "Field",
    "VectorField",
    "gradient",
    "divergence",
    "jacobian",
    "laplacian",
    "node_weights",
    "integrate",
    "ball_mask",
    "clamp_phase",
    "write_csv",
    "read_csv",
    "write_binary",
    "read_binary",
]

PHASE = "phase"
FREE = "free"
BINARY_MAGIC = b"FBAC1"


@dataclass(frozen=True)
class Grid:
    """Tensor-product lattice over a box ``prod [lo_k, hi_k]``.

    Parameters
    ----------
    extents : sequence of (lo, hi)
        One interval per axis, ``lo < hi``.
    nodes : sequence of int
        Node count per axis, at least 3.
    """

    extents: tuple[tuple[float, float], ...]
    nodes: tuple[int, ...]

    def __post_init__(self):
        extents = tuple((float(lo), float(hi)) for lo, hi in self.extents)
        nodes = tuple(int(n) for n in self.nodes)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "nodes", nodes)
        if not 1 <= len(nodes) <= 3:
            raise ConfigurationError(f"grid dimension must be 1, 2 or 3, got {len(nodes)}")
        if len(extents) != len(nodes):
            raise ConfigurationError("extents and nodes must have the same length")
        for (lo, hi), n in zip(extents, nodes):
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise ConfigurationError(f"invalid extent [{lo}, {hi}]")
            if n < 3:
                raise ConfigurationError(f"need at least 3 nodes per axis, got {n}")

    @classmethod
    def from_spacing(cls, extents, h) -> "Grid":
        """Grid whose spacing is ``h`` (scalar or per axis), rounded to fit the extents."""
        extents = tuple(tuple(e) for e in extents)
        hs = np.broadcast_to(np.asarray(h, dtype=float), (len(extents),))
        nodes = tuple(int(round((hi - lo) / hk)) + 1 for (lo, hi), hk in zip(extents, hs))
        return cls(extents, nodes)

    @classmethod
    def cube(cls, dim: int, lo: float, hi: float, n: int) -> "Grid":
        return cls(((lo, hi),) * dim, (n,) * dim)

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nodes

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.extents, self.nodes))

    @property
    def h(self) -> float:
        """Smallest spacing over all axes."""
        return min(self.spacing)

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.extents]))

    def axis(self, k: int) -> np.ndarray:
        lo, hi = self.extents[k]
        return np.linspace(lo, hi, self.nodes[k])

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(self.axis(k) for k in range(self.dim)), indexing="ij"))

    def points(self) -> np.ndarray:
        """Node coordinates as an ``(size, dim)`` array in row-major order."""
        return np.stack([c.ravel() for c in self.mesh()], axis=1)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        return mask

    def face_mask(self, axis: int, side: str) -> np.ndarray:
        """Nodes on the face ``coord[axis] == lo`` (side ``"lo"``) or ``== hi``."""
        if side not in ("lo", "hi"):
            raise ConfigurationError(f"face side must be 'lo' or 'hi', got {side!r}")
        mask = np.zeros(self.shape, dtype=bool)
        idx = [slice(None)] * self.dim
        idx[axis] = 0 if side == "lo" else -1
        mask[tuple(idx)] = True
        return mask

    def distance_to_boundary(self, point) -> float:
        p = np.asarray(point, dtype=float)
        return float(min(min(p[k] - lo, hi - p[k]) for k, (lo, hi) in enumerate(self.extents)))

    def nearest_node(self, point) -> tuple[int, ...]:
        p = np.asarray(point, dtype=float)
        idx = []
        for k, (lo, _hi) in enumerate(self.extents):
            i = int(round((p[k] - lo) / self.spacing[k]))
            idx.append(min(max(i, 0), self.nodes[k] - 1))
        return tuple(idx)

    def to_dict(self) -> dict:
        return {"extents": [list(e) for e in self.extents], "nodes": list(self.nodes)}


@dataclass
class Field:
    """Real values on the nodes of ``grid``.

    ``kind="phase"`` fields must lie in ``[-1, 1]``; ``kind="free"`` fields
    are unrestricted.
    """

    grid: Grid
    values: np.ndarray
    kind: str = PHASE

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size != self.grid.size:
            raise InputError(
                f"field has {values.size} values but the grid has {self.grid.size} nodes"
            )
        self.values = values.reshape(self.grid.shape)
        if self.kind not in (PHASE, FREE):
            raise InputError(f"unknown field kind {self.kind!r}")
        if self.kind == PHASE:
            if not np.all(np.isfinite(self.values)):
                raise InputError("phase field contains non-finite values")
            if self.values.min() < -1.0 or self.values.max() > 1.0:
                raise InputError("phase field values must lie in [-1, 1]")

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.kind)

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values, self.kind)


@dataclass
class VectorField:
    """``grid.dim`` components per node, stored as ``(dim, *grid.shape)``."""

    grid: Grid
    components: np.ndarray = field(repr=False)

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        expected = (self.grid.dim,) + self.grid.shape
        if comps.shape != expected:
            raise InputError(f"vector field shape {comps.shape} does not match {expected}")
        self.components = comps

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components**2, axis=0))

    def vanishes_on_boundary(self, atol: float = 0.0) -> bool:
        bnd = self.grid.boundary_mask()
        return bool(np.all(np.abs(self.components[:, bnd]) <= atol))


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, Field) else np.asarray(u, dtype=float)


def _check_shape(grid: Grid, arr: np.ndarray):
    if arr.shape != grid.shape:
        raise ConfigurationError(f"array shape {arr.shape} does not match grid {grid.shape}")


def _partials(grid: Grid, arr: np.ndarray) -> list[np.ndarray]:
    _check_shape(grid, arr)
    # central differences inside, second-order one-sided at the boundary
    parts = np.gradient(arr, *grid.spacing, edge_order=2)
    if grid.dim == 1:
        parts = [parts]
    return list(parts)


def gradient(u: Field) -> VectorField:
    """Nodal gradient of a scalar field."""
    return VectorField(u.grid, np.stack(_partials(u.grid, u.values)))


def jacobian(g: VectorField) -> np.ndarray:
    """``D g`` as an array of shape ``(dim, dim, *shape)`` with ``[i, j] = d g_i / d x_j``."""
    return np.stack([np.stack(_partials(g.grid, comp)) for comp in g.components])


def divergence(g: VectorField) -> np.ndarray:
    return sum(_partials(g.grid, g.components[k])[k] for k in range(g.grid.dim))


def laplacian(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Compact ``2*dim + 1`` point Laplacian with mirror (zero-flux) ghosts.

    This is the exact nodal gradient, divided by the trapezoid node weights,
    of the link Dirichlet sum returned by :func:`link_dirichlet`.
    """
    _check_shape(grid, values)
    out = np.zeros_like(values)
    for k, hk in enumerate(grid.spacing):
        v = np.moveaxis(values, k, 0)
        o = np.moveaxis(out, k, 0)
        d = (v[1:] - v[:-1]) / hk**2
        o[:-1] += d
        o[1:] -= d
        # boundary nodes carry half weight, so their single link counts twice
        o[0] += d[0]
        o[-1] -= d[-1]
    return out


def link_dirichlet(grid: Grid, values: np.ndarray) -> float:
    """Sum over lattice links of ``|du/h|^2`` times the link's dual volume."""
    _check_shape(grid, values)
    w = node_weights(grid)
    total = 0.0
    for k, hk in enumerate(grid.spacing):
        v = np.moveaxis(values, k, 0)
        wk = np.moveaxis(w, k, 0)
        # dual volume of a link: h_k times the transverse trapezoid weights
        transverse = wk[0] / (0.5 * hk)
        d = (v[1:] - v[:-1]) / hk
        total += float(np.sum(d**2 * transverse * hk))
    return total


def node_weights(grid: Grid) -> np.ndarray:
    """Trapezoid weights: product of ``h`` per axis, halved on each boundary axis."""
    w = np.ones(grid.shape)
    for k, hk in enumerate(grid.spacing):
        wk = np.full(grid.nodes[k], hk)
        wk[0] *= 0.5
        wk[-1] *= 0.5
        shape = [1] * grid.dim
        shape[k] = grid.nodes[k]
        w = w * wk.reshape(shape)
    return w


def integrate(f, mask=None, grid: Grid | None = None) -> float:
    """Trapezoid-consistent quadrature of a nodal field, optionally restricted to ``mask``."""
    if isinstance(f, Field):
        grid = f.grid
    if grid is None:
        raise ConfigurationError("integrate needs a Field or an explicit grid")
    vals = _values(f)
    _check_shape(grid, vals)
    prod = vals * node_weights(grid)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        _check_shape(grid, mask)
        prod = np.where(mask, prod, 0.0)
    return float(np.sum(prod.ravel()))


def ball_mask(grid: Grid, center, r: float) -> np.ndarray:
    """Nodes whose Euclidean distance to ``center`` is at most ``r``."""
    if r <= 0:
        raise ConfigurationError("ball radius must be positive")
    c = np.asarray(center, dtype=float).reshape(-1)
    if c.size != grid.dim:
        raise ConfigurationError("center dimension does not match grid")
    d2 = np.zeros(grid.shape)
    for k, x in enumerate(grid.mesh()):
        d2 = d2 + (x - c[k]) ** 2
    # relative slack absorbs roundoff for nodes exactly on the sphere
    return d2 <= (r * r) * (1.0 + 1e-12)


def clamp_phase(u) -> Field:
    """Project onto ``[-1, 1]`` pointwise."""
    if isinstance(u, Field):
        return Field(u.grid, np.clip(u.values, -1.0, 1.0), PHASE)
    raise InputError("clamp_phase expects a Field")


# --- serialization -----------------------------------------------------------


def write_csv(u: Field, path) -> None:
    """One row per node: ``index,coord_1..coord_n,value`` in row-major order."""
    pts = u.grid.points()
    vals = u.values.ravel()
    header = ",".join(["index"] + [f"coord_{k + 1}" for k in range(u.grid.dim)] + ["value"])
    lines = [header]
    for i in range(vals.size):
        row = [str(i)] + [repr(float(x)) for x in pts[i]] + [repr(float(vals[i]))]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path, grid: Grid, kind: str = FREE) -> Field:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != grid.dim + 2:
        raise InputError("CSV column count does not match grid dimension")
    order = np.argsort(data[:, 0].astype(np.int64), kind="stable")
    return Field(grid, data[order, -1], kind)


def write_binary(u: Field, path) -> None:
    """Little-endian: magic ``FBAC1``, dim, counts, (lo, hi) per axis, values."""
    g = u.grid
    buf = bytearray(BINARY_MAGIC)
    buf += struct.pack("<q", g.dim)
    buf += struct.pack(f"<{g.dim}q", *g.nodes)
    for lo, hi in g.extents:
        buf += struct.pack("<dd", lo, hi)
    buf += np.ascontiguousarray(u.values, dtype="<f8").tobytes(order="C")
    Path(path).write_bytes(bytes(buf))


def read_binary(path, kind: str = FREE) -> Field:
    raw = Path(path).read_bytes()
    if raw[:5] != BINARY_MAGIC:
        raise InputError("not an FBAC1 field file")
    off = 5
    (dim,) = struct.unpack_from("<q", raw, off)
    off += 8
    nodes = struct.unpack_from(f"<{dim}q", raw, off)
    off += 8 * dim
    extents = []
    for _ in range(dim):
        extents.append(struct.unpack_from("<dd", raw, off))
        off += 16
    grid = Grid(tuple(extents), tuple(nodes))
    values = np.frombuffer(raw, dtype="<f8", offset=off)
    if values.size != grid.size:
        raise InputError("truncated FBAC1 field file")
    return Field(grid, values.astype(float).reshape(grid.shape), kind)


def as_field(grid: Grid, values: np.ndarray | Sequence[float], kind: str = PHASE) -> Field:
    return Field(grid, np.asarray(values, dtype=float), kind)
