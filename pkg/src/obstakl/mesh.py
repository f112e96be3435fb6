"""Interval, triangle, graded and cylinder meshes.

All indices are 0-based.  Cylinder nodes are numbered
``base_index + level * n_base_vertices`` so that the nodes of the trace
plane ``Omega x {0}`` form a contiguous prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "MeshError",
    "SimplicialMesh",
    "GradedPartition",
    "CylinderMesh",
    "uniform_interval_mesh",
    "structured_triangle_mesh",
    "graded_partition",
    "cylinder_mesh",
    "is_weakly_acute",
    "interval_interpolation_matrix",
    "structured_interpolation_matrix",
    "dump_mesh",
    "load_mesh",
]


class MeshError(ValueError):
    pass


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """Conforming simplicial mesh in 1D (intervals) or 2D (triangles)."""

    vertices: np.ndarray
    cells: np.ndarray
    boundary_nodes: np.ndarray
    # (x0, x1) in 1D or (x0, x1, y0, y1) in 2D; set by the structured builders
    box: tuple = field(default=())
    n_per_side: int = 0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "vertices", _frozen(v, float))
        object.__setattr__(self, "cells", _frozen(self.cells, np.int64))
        object.__setattr__(self, "boundary_nodes",
                           _frozen(np.unique(self.boundary_nodes), np.int64))
        if self.dim not in (1, 2):
            raise MeshError(f"unsupported dimension {self.dim}")
        if self.cells.shape[1] != self.dim + 1:
            raise MeshError("cells must have dim+1 vertices")

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    def cell_measures(self) -> np.ndarray:
        X = self.vertices[self.cells]
        if self.dim == 1:
            return np.abs(X[:, 1, 0] - X[:, 0, 0])
        e1 = X[:, 1] - X[:, 0]
        e2 = X[:, 2] - X[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def _edge_lengths(self) -> np.ndarray:
        X = self.vertices[self.cells]
        return np.stack([np.linalg.norm(X[:, 1] - X[:, 2], axis=1),
                         np.linalg.norm(X[:, 2] - X[:, 0], axis=1),
                         np.linalg.norm(X[:, 0] - X[:, 1], axis=1)], axis=1)

    def cell_diameters(self) -> np.ndarray:
        """h_T = diam(T)."""
        if self.dim == 1:
            return self.cell_measures()
        return self._edge_lengths().max(axis=1)

    def inscribed_diameters(self) -> np.ndarray:
        """rho_T, the diameter of the largest ball inscribed in T."""
        if self.dim == 1:
            return self.cell_measures()
        perimeter = self._edge_lengths().sum(axis=1)
        return 4.0 * self.cell_measures() / perimeter

    def shape_coefficients(self) -> np.ndarray:
        return self.cell_diameters() / self.inscribed_diameters()

    @property
    def mesh_size(self) -> float:
        return float(self.cell_diameters().max())

    def validate(self, domain_measure: float | None = None,
                 sigma_max: float = 10.0) -> None:
        """Check measure consistency and shape regularity; raise MeshError."""
        meas = self.cell_measures()
        bad = np.flatnonzero(meas <= 0.0)
        if bad.size:
            raise MeshError(f"degenerate cell {int(bad[0])}")
        if domain_measure is not None:
            total = meas.sum()
            if abs(total - domain_measure) > 1e-12 * domain_measure:
                raise MeshError(
                    f"cell measures sum to {total!r}, expected {domain_measure!r}")
        sigma = self.shape_coefficients().max()
        if sigma > sigma_max:
            raise MeshError(f"shape coefficient {sigma:.3g} exceeds {sigma_max}")


@dataclass(frozen=True, eq=False)
class GradedPartition:
    """Partition y_k = (k/M)^gamma * Y of [0, Y]."""

    Y: float
    M: int
    gamma: float
    nodes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(self.nodes, float))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def sigma_Y(self) -> float:
        """Largest ratio between the lengths of neighbouring intervals."""
        w = self.widths
        if w.size < 2:
            return 1.0
        r = w[1:] / w[:-1]
        return float(max(r.max(), (1.0 / r).max()))


@dataclass(frozen=True, eq=False)
class CylinderMesh:
    """Tensor product of a base mesh of Omega and a partition of [0, Y]."""

    base: SimplicialMesh
    axial: GradedPartition

    @property
    def n_base(self) -> int:
        return self.base.n_vertices

    @property
    def M(self) -> int:
        return self.axial.M

    @property
    def n_nodes(self) -> int:
        return self.n_base * (self.M + 1)

    @property
    def n_cells(self) -> int:
        return self.base.n_cells * self.M

    def node_index(self, base_index, level):
        return np.asarray(base_index) + np.asarray(level) * self.n_base

    def coordinates(self) -> np.ndarray:
        """(n_nodes, dim+1) array of (x', y)."""
        xb = np.tile(self.base.vertices, (self.M + 1, 1))
        y = np.repeat(self.axial.nodes, self.n_base)
        return np.column_stack([xb, y])

    def dirichlet_nodes(self) -> np.ndarray:
        """Nodes on the lateral boundary and on the top Omega x {Y}."""
        lateral = (self.base.boundary_nodes[None, :]
                   + self.n_base * np.arange(self.M + 1)[:, None]).ravel()
        top = self.M * self.n_base + np.arange(self.n_base)
        return np.unique(np.concatenate([lateral, top]))

    def trace_nodes(self) -> np.ndarray:
        """Interior nodes of the trace plane Omega x {0}."""
        return self.base.interior_nodes.copy()


def uniform_interval_mesh(a: float, b: float, n_cells: int) -> SimplicialMesh:
    if not a < b:
        raise MeshError(f"need a < b, got ({a}, {b})")
    if n_cells < 1:
        raise MeshError("n_cells must be positive")
    x = np.linspace(a, b, n_cells + 1)
    x[0], x[-1] = a, b
    cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    return SimplicialMesh(x, cells, [0, n_cells], box=(float(a), float(b)),
                          n_per_side=n_cells)


def structured_triangle_mesh(square: Sequence[float] = (0.0, 1.0, 0.0, 1.0),
                             n_per_side: int = 1) -> SimplicialMesh:
    """Split an axis-aligned rectangle (x0, x1, y0, y1) into n x n cells,
    each cut along its (x0,y0)-(x1,y1) diagonal into two right triangles.

    The resulting mesh is weakly acute: the two angles opposite every
    diagonal are right angles and all other angles are acute.
    """
    x0, x1, y0, y1 = map(float, square)
    if not (x0 < x1 and y0 < y1):
        raise MeshError(f"degenerate rectangle {square}")
    n = int(n_per_side)
    if n < 1:
        raise MeshError("n_per_side must be positive")
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Yg = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Yg.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([v00, v10, v11])
    cells[1::2] = np.column_stack([v00, v11, v01])
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    on_bdry = (ii == 0) | (ii == n) | (jj == 0) | (jj == n)
    bnd = np.flatnonzero(on_bdry.ravel())
    return SimplicialMesh(verts, cells, bnd, box=(x0, x1, y0, y1), n_per_side=n)


def graded_partition(Y: float, M: int, gamma: float) -> GradedPartition:
    if not Y > 0:
        raise MeshError("Y must be positive")
    if M < 1:
        raise MeshError("M must be positive")
    if gamma < 1:
        raise MeshError(f"grading exponent must be >= 1, got {gamma}")
    k = np.arange(M + 1)
    nodes = (k / M) ** gamma * Y
    nodes[-1] = Y
    return GradedPartition(float(Y), int(M), float(gamma), nodes)


def cylinder_mesh(base: SimplicialMesh, axial: GradedPartition) -> CylinderMesh:
    return CylinderMesh(base, axial)


def is_weakly_acute(mesh: SimplicialMesh, tol: float = 1e-14):
    """Return ``(ok, pairs)`` where pairs lists node pairs (i, j), i < j, whose
    stiffness entry is positive beyond ``tol``."""
    from .assembly import full_stiffness

    K = sp.triu(full_stiffness(mesh), k=1).tocoo()
    bad = K.data > tol
    pairs = sorted(zip(K.row[bad].tolist(), K.col[bad].tolist()))
    return not pairs, pairs


def interval_interpolation_matrix(nodes, points) -> sp.csr_matrix:
    """Sparse matrix evaluating a continuous piecewise linear function with
    values at ``nodes`` (increasing) at the given points."""
    nodes = np.asarray(nodes, dtype=float)
    points = np.asarray(points, dtype=float)
    k = np.clip(np.searchsorted(nodes, points, side="right") - 1, 0, len(nodes) - 2)
    t = (points - nodes[k]) / (nodes[k + 1] - nodes[k])
    rows = np.repeat(np.arange(len(points)), 2)
    cols = np.column_stack([k, k + 1]).ravel()
    vals = np.column_stack([1.0 - t, t]).ravel()
    P = sp.csr_matrix((vals, (rows, cols)), shape=(len(points), len(nodes)))
    P.eliminate_zeros()
    return P


def structured_interpolation_matrix(mesh: SimplicialMesh, points) -> sp.csr_matrix:
    """Evaluation matrix of P1 functions on a structured triangle mesh."""
    if mesh.dim != 2 or not mesh.n_per_side:
        raise MeshError("structured 2D mesh required")
    x0, x1, y0, y1 = mesh.box
    n = mesh.n_per_side
    points = np.atleast_2d(np.asarray(points, dtype=float))
    sx = (points[:, 0] - x0) / (x1 - x0) * n
    sy = (points[:, 1] - y0) / (y1 - y0) * n
    i = np.clip(np.floor(sx).astype(np.int64), 0, n - 1)
    j = np.clip(np.floor(sy).astype(np.int64), 0, n - 1)
    s = sx - i
    t = sy - j
    v00 = j * (n + 1) + i
    v10, v01 = v00 + 1, v00 + n + 1
    v11 = v01 + 1
    lower = s >= t
    # lower triangle (v00, v10, v11), upper triangle (v00, v11, v01)
    c = np.where(lower[:, None],
                 np.column_stack([v00, v10, v11]),
                 np.column_stack([v00, v11, v01]))
    w = np.where(lower[:, None],
                 np.column_stack([1.0 - s, s - t, t]),
                 np.column_stack([1.0 - t, s, t - s]))
    rows = np.repeat(np.arange(len(points)), 3)
    P = sp.csr_matrix((w.ravel(), (rows, c.ravel())),
                      shape=(len(points), mesh.n_vertices))
    P.eliminate_zeros()
    return P


def dump_mesh(mesh: SimplicialMesh) -> str:
    """Serialize to the ``OBSMESH v1`` text format."""
    lines = ["OBSMESH v1", f"vertices {mesh.n_vertices}"]
    lines += [" ".join(f"{c:.17g}" for c in v) for v in mesh.vertices]
    lines.append(f"cells {mesh.n_cells}")
    lines += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines.append(f"boundary {len(mesh.boundary_nodes)}")
    lines += [str(int(i)) for i in mesh.boundary_nodes]
    return "\n".join(lines) + "\n"


def load_mesh(text: str) -> SimplicialMesh:
    lines = text.split("\n")
    if lines[0] != "OBSMESH v1":
        raise MeshError("not an OBSMESH v1 file")
    pos = 1

    def section(name):
        nonlocal pos
        key, count = lines[pos].split(" ")
        if key != name:
            raise MeshError(f"expected section {name!r}, got {key!r}")
        count = int(count)
        body = lines[pos + 1:pos + 1 + count]
        pos += 1 + count
        return body

    verts = np.array([[float(c) for c in ln.split(" ")] for ln in section("vertices")])
    cells = np.array([[int(c) for c in ln.split(" ")] for ln in section("cells")],
                     dtype=np.int64)
    bnd = np.array([int(ln) for ln in section("boundary")], dtype=np.int64)
    return SimplicialMesh(verts, cells, bnd)
