"""P1 and P1 x P1 finite element spaces, matrices, loads and error norms.

Callables describing data are invoked with unpacked coordinate arrays,
``f(x)`` in 1D, ``f(x, y)`` in 2D and ``f(x, y)`` on a 1D cylinder where the
last argument is the extended variable.  Gradients return one array per
coordinate (a single array is accepted in 1D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp
from scipy.special import gamma as gamma_fn, roots_jacobi

from .mesh import CylinderMesh, SimplicialMesh

__all__ = [
    "AssemblyError",
    "FeSpace",
    "full_stiffness",
    "full_mass",
    "assemble_stiffness",
    "assemble_mass_plus_stiffness",
    "axial_element_matrices",
    "axial_matrices",
    "full_weighted_stiffness",
    "assemble_weighted_stiffness",
    "assemble_load",
    "interpolate_nodal",
    "energy_norm_error",
    "l2_norm_error",
    "linf_norm_error",
    "weighted_energy_error",
    "extension_constant",
    "dump_matrix",
    "simplex_quadrature",
]


class AssemblyError(ValueError):
    pass


Mesh = Union[SimplicialMesh, CylinderMesh]


@dataclass(frozen=True, eq=False)
class FeSpace:
    """Nodal P1 (or P1 x P1) space with Dirichlet and constraint node sets.

    ``free`` and ``dirichlet`` partition the nodes; ``trace`` lists the
    nodes carrying the unilateral constraint.
    """

    mesh: Mesh
    free: np.ndarray
    dirichlet: np.ndarray
    trace: np.ndarray

    @classmethod
    def classical(cls, mesh: SimplicialMesh) -> "FeSpace":
        free = mesh.interior_nodes
        return cls(mesh, free, mesh.boundary_nodes.copy(), free.copy())

    @classmethod
    def thin(cls, mesh: SimplicialMesh) -> "FeSpace":
        return cls(mesh, np.arange(mesh.n_vertices), np.empty(0, dtype=np.int64),
                   mesh.boundary_nodes.copy())

    @classmethod
    def cylinder(cls, cyl: CylinderMesh) -> "FeSpace":
        dirichlet = cyl.dirichlet_nodes()
        mask = np.ones(cyl.n_nodes, dtype=bool)
        mask[dirichlet] = False
        return cls(cyl, np.flatnonzero(mask), dirichlet, cyl.trace_nodes())

    @property
    def n_nodes(self) -> int:
        if isinstance(self.mesh, CylinderMesh):
            return self.mesh.n_nodes
        return self.mesh.n_vertices

    @property
    def n_free(self) -> int:
        return len(self.free)

    def coordinates(self) -> np.ndarray:
        if isinstance(self.mesh, CylinderMesh):
            return self.mesh.coordinates()
        return self.mesh.vertices

    def free_position(self, nodes) -> np.ndarray:
        """Positions of the given (free) nodes inside the free-dof vector."""
        pos = np.full(self.n_nodes, -1, dtype=np.int64)
        pos[self.free] = np.arange(self.n_free)
        out = pos[np.asarray(nodes, dtype=np.int64)]
        if np.any(out < 0):
            raise AssemblyError("node is not a free degree of freedom")
        return out

    def trace_positions(self) -> np.ndarray:
        return self.free_position(self.trace)

    def expand(self, U_free) -> np.ndarray:
        """Full nodal vector, zero on the Dirichlet nodes."""
        U = np.zeros(self.n_nodes)
        U[self.free] = U_free
        return U


# ---------------------------------------------------------------------------
# quadrature


def simplex_quadrature(dim: int, npts: int):
    """Barycentric points and weights (summing to one) on the reference simplex."""
    if dim == 1:
        xi, w = np.polynomial.legendre.leggauss(npts)
        t = 0.5 * (xi + 1.0)
        return np.column_stack([1.0 - t, t]), 0.5 * w
    if npts == 1:
        return np.full((1, 3), 1.0 / 3.0), np.ones(1)
    if npts == 3:
        a, b = 2.0 / 3.0, 1.0 / 6.0
        pts = np.array([[a, b, b], [b, a, b], [b, b, a]])
        return pts, np.full(3, 1.0 / 3.0)
    if npts == 7:
        # degree 5
        a1, b1 = 0.0597158717897698, 0.4701420641051151
        a2, b2 = 0.7974269853530873, 0.1012865073234563
        w1, w2 = 0.1323941527885062, 0.1259391805448271
        pts = np.array([[1 / 3, 1 / 3, 1 / 3],
                        [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
                        [a2, b2, b2], [b2, a2, b2], [b2, b2, a2]])
        return pts, np.array([0.225, w1, w1, w1, w2, w2, w2])
    raise ValueError(f"no {npts}-point rule on triangles")


def _call(fn, pts):
    return np.asarray(fn(*pts.T), dtype=float) * np.ones(pts.shape[0])


def _call_grad(fn, pts):
    g = fn(*pts.T)
    if isinstance(g, (tuple, list)):
        g = np.column_stack([np.asarray(c, dtype=float) * np.ones(pts.shape[0])
                             for c in g])
    else:
        g = np.asarray(g, dtype=float).reshape(pts.shape[0], -1)
    return g


# ---------------------------------------------------------------------------
# P1 element data


def _gradients(mesh: SimplicialMesh):
    """Barycentric gradients (ncells, dim+1, dim) and cell measures."""
    X = mesh.vertices[mesh.cells]
    B = X[:, 1:, :] - X[:, :1, :]
    det = np.linalg.det(B) if mesh.dim > 1 else B[:, 0, 0]
    meas = np.abs(det) / math.factorial(mesh.dim)
    scale = np.abs(X).max() if X.size else 1.0
    bad = np.flatnonzero(meas <= 1e-14 * max(scale, 1.0) ** mesh.dim)
    if bad.size:
        c = int(bad[0])
        raise AssemblyError(f"cell {c} {mesh.cells[c].tolist()} has zero measure")
    Binv = np.linalg.inv(B)
    g = np.empty((mesh.n_cells, mesh.dim + 1, mesh.dim))
    g[:, 1:, :] = np.transpose(Binv, (0, 2, 1))
    g[:, 0, :] = -g[:, 1:, :].sum(axis=1)
    return g, meas


def _scatter(cells, local, n):
    k = cells.shape[1]
    rows = np.repeat(cells, k, axis=1).ravel()
    cols = np.tile(cells, (1, k)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return _mirror(A)


def _mirror(A):
    """Exactly symmetric copy built from the upper triangle."""
    U = sp.triu(A, k=1)
    return (sp.diags(A.diagonal()) + U + U.T).tocsr()


def full_stiffness(mesh: SimplicialMesh) -> sp.csr_matrix:
    """Stiffness matrix on all nodes, before any boundary elimination."""
    g, meas = _gradients(mesh)
    local = np.einsum("cik,cjk->cij", g, g) * meas[:, None, None]
    return _scatter(mesh.cells, local, mesh.n_vertices)


def full_mass(mesh: SimplicialMesh) -> sp.csr_matrix:
    _, meas = _gradients(mesh)
    d = mesh.dim
    ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    local = meas[:, None, None] * ref[None]
    return _scatter(mesh.cells, local, mesh.n_vertices)


def _restrict(A, space: FeSpace):
    return A[space.free][:, space.free].tocsr()


def assemble_stiffness(space: FeSpace) -> sp.csr_matrix:
    return _restrict(full_stiffness(space.mesh), space)


def assemble_mass_plus_stiffness(space: FeSpace) -> sp.csr_matrix:
    mesh = space.mesh
    return _restrict(_mirror(full_stiffness(mesh) + full_mass(mesh)), space)


# ---------------------------------------------------------------------------
# weighted axial integrals


def _binomial_series(alpha, r, j, sign):
    """r * sum_m binom(alpha, m) (sign r)^m / (m + j + 1) for r <= 1/2."""
    total = np.zeros_like(r)
    coef = 1.0
    power = np.ones_like(r)
    for m in range(80):
        total += coef * power / (m + j + 1)
        coef *= (alpha - m) / (m + 1)
        power = power * (sign * r)
        if abs(coef) * np.max(np.abs(power), initial=0.0) < 1e-18:
            break
    return r * total


def _moments_from_left(a, b, alpha):
    """P_j = int_a^b y^alpha ((y - a)/h)^j dy for j = 0, 1, 2."""
    h = b - a
    out = np.empty((3,) + a.shape)
    zero = a == 0.0
    if np.any(zero):
        bz = b[zero]
        for j in range(3):
            out[j, zero] = bz ** (alpha + 1.0) / (alpha + j + 1.0)
    pos = ~zero
    if np.any(pos):
        ap = a[pos]
        r = h[pos] / ap
        lead = ap ** (alpha + 1.0)
        small = r <= 0.5
        vals = np.empty((3, r.size))
        for j in range(3):
            vals[j, small] = _binomial_series(alpha, r[small], j, 1.0)
        rl = r[~small]
        if rl.size:
            E = {p: np.expm1(p * np.log1p(rl)) / p
                 for p in (alpha + 1.0, alpha + 2.0, alpha + 3.0)}
            e1, e2, e3 = E[alpha + 1.0], E[alpha + 2.0], E[alpha + 3.0]
            vals[0, ~small] = e1
            vals[1, ~small] = (e2 - e1) / rl
            vals[2, ~small] = (e3 - 2.0 * e2 + e1) / rl ** 2
        out[:, pos] = lead * vals
    return out


def _moments_from_right(a, b, alpha):
    """Q_j = int_a^b y^alpha ((b - y)/h)^j dy for j = 0, 1, 2."""
    h = b - a
    r = h / b
    lead = b ** (alpha + 1.0)
    vals = np.empty((3,) + a.shape)
    small = r <= 0.5
    for j in range(3):
        vals[j, small] = _binomial_series(alpha, r[small], j, -1.0)
    if np.any(~small):
        rl = r[~small]
        q = a[~small] / b[~small]
        with np.errstate(divide="ignore"):
            logq = np.log(q)
        G = {p: -np.expm1(p * logq) / p for p in (alpha + 1.0, alpha + 2.0, alpha + 3.0)}
        g1, g2, g3 = G[alpha + 1.0], G[alpha + 2.0], G[alpha + 3.0]
        vals[0, ~small] = g1
        vals[1, ~small] = (g1 - g2) / rl
        vals[2, ~small] = (g1 - 2.0 * g2 + g3) / rl ** 2
    return lead * vals


def axial_element_matrices(a, b, alpha: float):
    """Exact weighted 1D element matrices on intervals [a, b] of [0, inf).

    Returns ``(mass, stiff)`` of shape (n, 2, 2) with entries
    ``int_a^b y^alpha phi_i phi_j dy`` and ``int_a^b y^alpha phi_i' phi_j' dy``
    for the two hat functions of the interval.
    """
    if not -1.0 < alpha < 1.0:
        raise AssemblyError(f"weight exponent must lie in (-1, 1), got {alpha}")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if np.any(a < 0.0):
        raise AssemblyError("axial intervals must lie in [0, inf)")
    if np.any(b <= a):
        k = int(np.flatnonzero(b <= a)[0])
        raise AssemblyError(f"degenerate axial interval {k}: [{a[k]}, {b[k]}]")
    P = _moments_from_left(a, b, alpha)
    Q = _moments_from_right(a, b, alpha)
    h = b - a
    mass = np.empty(a.shape + (2, 2))
    mass[:, 0, 0] = Q[2]
    mass[:, 1, 1] = P[2]
    mass[:, 0, 1] = mass[:, 1, 0] = P[1] - P[2]
    stiff = np.empty_like(mass)
    k = P[0] / h ** 2
    stiff[:, 0, 0] = stiff[:, 1, 1] = k
    stiff[:, 0, 1] = stiff[:, 1, 0] = -k
    return mass, stiff


def axial_matrices(nodes, alpha: float):
    """Global weighted mass and stiffness on a partition of [0, Y]."""
    nodes = np.asarray(nodes, dtype=float)
    m, s = axial_element_matrices(nodes[:-1], nodes[1:], alpha)
    cells = np.column_stack([np.arange(len(nodes) - 1), np.arange(1, len(nodes))])
    return _scatter(cells, m, len(nodes)), _scatter(cells, s, len(nodes))


def full_weighted_stiffness(cyl: CylinderMesh, alpha: float) -> sp.csr_matrix:
    """int y^alpha grad(phi_i) . grad(phi_j) over the cylinder, all nodes."""
    My, Ky = axial_matrices(cyl.axial.nodes, alpha)
    Kx = full_stiffness(cyl.base)
    Mx = full_mass(cyl.base)
    return _mirror(sp.kron(My, Kx, format="csr") + sp.kron(Ky, Mx, format="csr"))


def assemble_weighted_stiffness(cyl: CylinderMesh, alpha: float) -> sp.csr_matrix:
    space = FeSpace.cylinder(cyl)
    return _restrict(full_weighted_stiffness(cyl, alpha), space)


def extension_constant(s: float) -> float:
    """d_s = 2^(1-2s) Gamma(1-s) / Gamma(s)."""
    if not 0.0 < s < 1.0:
        raise AssemblyError(f"s must lie in (0, 1), got {s}")
    return 2.0 ** (1.0 - 2.0 * s) * gamma_fn(1.0 - s) / gamma_fn(s)


# ---------------------------------------------------------------------------
# loads and interpolation


def _base_load(mesh: SimplicialMesh, f, npts=None):
    g, meas = _gradients(mesh)
    if callable(f):
        npts = npts or 3
        bary, w = simplex_quadrature(mesh.dim, npts)
        X = mesh.vertices[mesh.cells]
        pts = np.einsum("qa,cad->cqd", bary, X).reshape(-1, mesh.dim)
        fv = _call(f, pts).reshape(mesh.n_cells, len(w))
        if not np.all(np.isfinite(fv)):
            raise AssemblyError("load data is not finite")
        local = meas[:, None] * np.einsum("cq,q,qa->ca", fv, w, bary)
    else:
        fv = np.asarray(f, dtype=float)
        if fv.shape != (mesh.n_vertices,):
            raise AssemblyError("nodal load must have one value per vertex")
        if not np.all(np.isfinite(fv)):
            raise AssemblyError("load data is not finite")
        # vertex rule
        local = meas[:, None] / (mesh.dim + 1) * fv[mesh.cells]
    F = np.zeros(mesh.n_vertices)
    np.add.at(F, mesh.cells, local)
    return F


def assemble_load(space: FeSpace, f: Callable | np.ndarray, *, scale: float = 1.0,
                  npts: int | None = None) -> np.ndarray:
    """Load vector on the free dofs.

    On a cylinder the load acts on the trace plane only:
    ``F_z = scale * int_Omega f tr(phi_z)``.
    """
    mesh = space.mesh
    if isinstance(mesh, CylinderMesh):
        full = np.zeros(space.n_nodes)
        full[:mesh.n_base] = scale * _base_load(mesh.base, f, npts)
    else:
        full = scale * _base_load(mesh, f, npts)
    return full[space.free]


def interpolate_nodal(space: FeSpace, g: Callable) -> np.ndarray:
    """Values of g at every node of the space (full nodal vector)."""
    return _call(g, space.coordinates())


# ---------------------------------------------------------------------------
# error norms on simplicial meshes


def _quad_points(mesh: SimplicialMesh, npts):
    bary, w = simplex_quadrature(mesh.dim, npts)
    X = mesh.vertices[mesh.cells]
    pts = np.einsum("qa,cad->cqd", bary, X)
    return bary, w, pts


def _default_npts(dim):
    return 5 if dim == 1 else 7


def energy_norm_error(space: FeSpace, U, exact_grad, npts: int | None = None) -> float:
    """|| grad(u - U) ||_{L2} with U a full nodal vector."""
    mesh = space.mesh
    npts = npts or _default_npts(mesh.dim)
    g, meas = _gradients(mesh)
    gradU = np.einsum("ca,cad->cd", np.asarray(U)[mesh.cells], g)
    _, w, pts = _quad_points(mesh, npts)
    ge = _call_grad(exact_grad, pts.reshape(-1, mesh.dim))
    ge = ge.reshape(mesh.n_cells, len(w), mesh.dim)
    d2 = ((ge - gradU[:, None, :]) ** 2).sum(axis=2)
    return float(np.sqrt(np.sum(meas * (d2 @ w))))


def l2_norm_error(space: FeSpace, U, exact, npts: int | None = None) -> float:
    mesh = space.mesh
    npts = npts or _default_npts(mesh.dim)
    bary, w, pts = _quad_points(mesh, npts)
    meas = mesh.cell_measures()
    Uq = np.asarray(U)[mesh.cells] @ bary.T
    ue = _call(exact, pts.reshape(-1, mesh.dim)).reshape(Uq.shape)
    return float(np.sqrt(np.sum(meas * (((ue - Uq) ** 2) @ w))))


def linf_norm_error(space: FeSpace, U, exact, npts: int | None = None) -> float:
    """Max of |u - U| over the nodes and the quadrature points."""
    mesh = space.mesh
    npts = npts or _default_npts(mesh.dim)
    bary, w, pts = _quad_points(mesh, npts)
    Uq = np.asarray(U)[mesh.cells] @ bary.T
    ue = _call(exact, pts.reshape(-1, mesh.dim)).reshape(Uq.shape)
    at_nodes = np.abs(_call(exact, mesh.vertices) - np.asarray(U)).max()
    return float(max(np.abs(ue - Uq).max(), at_nodes))


def weighted_energy_error(space: FeSpace, alpha: float, V, exact_grad,
                          npts: int = 6) -> float:
    """( int_{C_Y} y^alpha |grad(U - V)|^2 )^(1/2) by tensor quadrature.

    Gauss-Jacobi points absorb the weight on the cell touching y = 0.
    ``exact_grad(x..., y)`` returns the gradient components of U, the last
    one being d/dy.
    """
    cyl = space.mesh
    base = cyl.base
    d = base.dim
    g, meas = _gradients(base)
    bary, wx = simplex_quadrature(d, _default_npts(d))
    X = base.vertices[base.cells]
    xq = np.einsum("qa,cad->cqd", bary, X)          # (cells, qx, d)
    nodes = cyl.axial.nodes
    V = np.asarray(V)
    xi, wl = np.polynomial.legendre.leggauss(npts)
    xj, wj = roots_jacobi(npts, 0.0, alpha)         # weight (1 + x)^alpha
    total = 0.0
    nb = cyl.n_base
    for k in range(cyl.M):
        a, b = nodes[k], nodes[k + 1]
        h = b - a
        if k == 0 and a == 0.0:
            t = 0.5 * (xj + 1.0)
            wy = wj * (0.5 ** (alpha + 1.0)) * h ** (alpha + 1.0)
        else:
            t = 0.5 * (xi + 1.0)
            wy = 0.5 * wl * h * (a + h * t) ** alpha
        y = a + h * t
        lo = V[k * nb:(k + 1) * nb][base.cells]           # (cells, d+1)
        hi = V[(k + 1) * nb:(k + 2) * nb][base.cells]
        # discrete gradient at (x', y): linear in t
        gx_lo = np.einsum("ca,cad->cd", lo, g)
        gx_hi = np.einsum("ca,cad->cd", hi, g)
        vq_lo = lo @ bary.T                                # (cells, qx)
        vq_hi = hi @ bary.T
        for ty, yy, wyy in zip(t, y, wy):
            gx = (1.0 - ty) * gx_lo + ty * gx_hi          # (cells, d)
            gy = (vq_hi - vq_lo) / h                      # (cells, qx)
            pts = np.concatenate([xq.reshape(-1, d),
                                  np.full((xq.shape[0] * xq.shape[1], 1), yy)], axis=1)
            ge = _call_grad(exact_grad, pts).reshape(base.n_cells, len(wx), d + 1)
            err = ((ge[:, :, :d] - gx[:, None, :]) ** 2).sum(axis=2) \
                + (ge[:, :, d] - gy) ** 2
            total += wyy * np.sum(meas * (err @ wx))
    return float(np.sqrt(total))


def dump_matrix(A) -> str:
    """Coordinate triplets ``i j value`` sorted by (i, j)."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    return "".join(f"{C.row[k]} {C.col[k]} {C.data[k]:.17g}\n" for k in order)
