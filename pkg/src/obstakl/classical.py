"""Classical obstacle problem: benchmarks, solves and discrete free boundaries."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .assembly import (FeSpace, assemble_load, assemble_stiffness, full_mass,
                       full_stiffness, interpolate_nodal)
from .mesh import (SimplicialMesh, interval_interpolation_matrix,
                   structured_interpolation_matrix, structured_triangle_mesh,
                   uniform_interval_mesh)
from .vi_solver import ObstacleSystem, ViSolution, solve_pdas, solve_psor

__all__ = [
    "ClassicalBenchmark",
    "FreeBoundaryEstimate",
    "benchmark_1d",
    "benchmark_2d",
    "problem_2d",
    "prolongation",
    "build_mesh",
    "obstacle_system",
    "solve_classical",
    "solve_system",
    "extract_free_boundary",
    "interface_metrics",
    "delta_for_level",
    "calibrate_c_star",
    "growth_probe",
    "reference_errors",
]


@dataclass(eq=False)
class ClassicalBenchmark:
    """Data of an obstacle problem on an interval or a rectangle.

    For 1D instances ``exact_u``/``exact_grad`` are analytic and
    ``gamma_points`` is the exact free boundary.  The 2D instance has no
    closed form; ``reference`` holds an overkill solution ``(mesh, U)``
    and the free boundary is taken from it.
    """

    name: str
    dim: int
    box: tuple
    f: Callable
    psi: Callable
    exact_u: Callable | None = None
    exact_grad: Callable | None = None
    exact_laplacian: Callable | None = None
    gamma_points: np.ndarray = field(default_factory=lambda: np.empty((0, 1)))
    omega_plus: Callable | None = None
    w2inf_seminorm: float = float("nan")
    reference: tuple | None = None

    @property
    def measure(self) -> float:
        b = self.box
        if self.dim == 1:
            return b[1] - b[0]
        return (b[1] - b[0]) * (b[3] - b[2])

    def complementarity_residual(self, x) -> float:
        """max over x of |min(-u'' - f, u - psi)|, using the analytic Laplacian."""
        x = np.asarray(x, dtype=float)
        lam = -self.exact_laplacian(x) - self.f(x)
        gap = self.exact_u(x) - self.psi(x)
        return float(np.max(np.abs(np.minimum(lam, gap))))


@dataclass(eq=False)
class FreeBoundaryEstimate:
    delta: float
    omega_plus_cells: np.ndarray
    omega_plus_measure: float
    gamma_points: np.ndarray
    mesh: SimplicialMesh
    gap: np.ndarray
    complement_measure: float = 0.0

    def contains(self, pts) -> np.ndarray:
        """Indicator of the discrete set {U_T - psi > delta} at points."""
        return self.value_at(pts) > self.delta

    def value_at(self, pts) -> np.ndarray:
        mesh = self.mesh
        pts = np.asarray(pts, dtype=float)
        if mesh.dim == 1:
            return np.interp(pts.ravel(), mesh.vertices[:, 0], self.gap)
        return structured_interpolation_matrix(mesh, pts) @ self.gap


# ---------------------------------------------------------------------------
# benchmarks

_A, _B = 0.25, 0.75


def _u1(x):
    x = np.asarray(x, dtype=float)
    inside = (x > _A) & (x < _B)
    return np.where(inside, 16.0 * (x - _A) ** 2 * (_B - x) ** 2, 0.0)


def _du1(x):
    x = np.asarray(x, dtype=float)
    inside = (x > _A) & (x < _B)
    p = (x - _A) * (_B - x)
    return np.where(inside, 32.0 * p * (_A + _B - 2.0 * x), 0.0)


def _d2u1(x):
    x = np.asarray(x, dtype=float)
    inside = (x > _A) & (x < _B)
    p = (x - _A) * (_B - x)
    return np.where(inside, 32.0 * ((_A + _B - 2.0 * x) ** 2 - 2.0 * p), 0.0)


def _f1(x):
    x = np.asarray(x, dtype=float)
    inside = (x > _A) & (x < _B)
    return np.where(inside, -_d2u1(x), -1.0)


def benchmark_1d() -> ClassicalBenchmark:
    """u = 16 (x - 1/4)^2 (3/4 - x)^2 on (1/4, 3/4), zero elsewhere; psi = 0."""
    return ClassicalBenchmark(
        name="classical1d",
        dim=1,
        box=(0.0, 1.0),
        f=_f1,
        psi=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        exact_u=_u1,
        exact_grad=_du1,
        exact_laplacian=_d2u1,
        gamma_points=np.array([[_A], [_B]]),
        omega_plus=lambda x: (np.asarray(x).ravel() > _A) & (np.asarray(x).ravel() < _B),
        # |u''| is largest at the free boundary: 32 (b - a)^2
        w2inf_seminorm=32.0 * (_B - _A) ** 2,
    )


BUMP_HEIGHT = 0.2
BUMP_CURVATURE = 2.0
LOAD_2D = -8.0


def _psi2(x, y):
    return BUMP_HEIGHT - BUMP_CURVATURE * ((x - 0.5) ** 2 + (y - 0.5) ** 2)


def benchmark_2d(reference_n: int = 512, solver: str = "pdas",
                 tol: float = 1e-12) -> ClassicalBenchmark:
    """Unit square, f = -8, concave bump obstacle, zero boundary values.

    The overkill reference is cached per (reference_n, solver, tol).
    """
    return _benchmark_2d_cached(int(reference_n), solver, float(tol))


def problem_2d() -> ClassicalBenchmark:
    """The 2D data without the overkill reference."""
    return ClassicalBenchmark(
        name="classical2d",
        dim=2,
        box=(0.0, 1.0, 0.0, 1.0),
        f=lambda x, y: np.full_like(np.asarray(x, dtype=float), LOAD_2D),
        psi=_psi2,
    )


@functools.lru_cache(maxsize=4)
def _benchmark_2d_cached(reference_n, solver, tol):
    bench = problem_2d()
    sol, space = solve_classical(bench, reference_n, solver=solver, tol=tol,
                                 linear_solver="direct", nested=True)
    mesh = space.mesh
    U = space.expand(sol.U)
    gap = U - interpolate_nodal(space, bench.psi)
    bench.reference = (mesh, U)
    bench.w2inf_seminorm = _second_difference_max(U, reference_n)
    # free boundary of the reference at its own threshold
    delta = delta_for_level(1.0 / reference_n, 1.0, bench.w2inf_seminorm)
    est = extract_free_boundary(space, gap, delta)
    bench.gamma_points = est.gamma_points
    bench.omega_plus = est.contains
    return bench


def _second_difference_max(U, n):
    G = U.reshape(n + 1, n + 1)
    h2 = (1.0 / n) ** 2
    dxx = np.abs(G[:, 2:] - 2.0 * G[:, 1:-1] + G[:, :-2]) / h2
    dyy = np.abs(G[2:, :] - 2.0 * G[1:-1, :] + G[:-2, :]) / h2
    return float(max(dxx.max(), dyy.max()))


# ---------------------------------------------------------------------------
# solving


def build_mesh(bench: ClassicalBenchmark, n: int) -> SimplicialMesh:
    if bench.dim == 1:
        return uniform_interval_mesh(bench.box[0], bench.box[1], n)
    return structured_triangle_mesh(bench.box, n)


def obstacle_system(bench: ClassicalBenchmark, n: int, psi=None):
    """Assemble the discrete VI on n cells (1D) or n x n squares (2D)."""
    space = FeSpace.classical(build_mesh(bench, n))
    A = assemble_stiffness(space)
    F = assemble_load(space, bench.f)
    psi_fn = bench.psi if psi is None else psi
    psi_free = interpolate_nodal(space, psi_fn)[space.free]
    return ObstacleSystem(A, F, psi_free, space.trace_positions()), space


def solve_system(sys: ObstacleSystem, solver: str = "pdas", tol: float = 1e-10,
                 U0=None, **options) -> ViSolution:
    if solver == "psor":
        opts = {k: v for k, v in options.items() if k in ("omega", "max_iter")}
        return solve_psor(sys, tol=tol, U0=U0, **opts)
    if solver == "pdas":
        opts = {k: v for k, v in options.items()
                if k in ("max_iter", "c", "linear_solver", "patience")}
        return solve_pdas(sys, tol=tol, U0=U0, **opts)
    raise ValueError(f"unknown solver {solver!r}")


def _nested_guess(bench, n, space, solver, tol, options):
    """Solve on n/2 (recursively down to 16) and interpolate as a start vector."""
    if n <= 16 or n % 2:
        return None
    coarse, cspace = solve_classical(bench, n // 2, solver=solver, tol=tol,
                                     nested=True, **options)
    Uc = cspace.expand(coarse.U)
    pts = space.coordinates()[space.free]
    if bench.dim == 1:
        return np.interp(pts[:, 0], cspace.mesh.vertices[:, 0], Uc)
    return structured_interpolation_matrix(cspace.mesh, pts) @ Uc


def solve_classical(bench: ClassicalBenchmark, n: int, solver: str = "pdas",
                    tol: float = 1e-10, psi=None, nested: bool = False,
                    **options):
    """Solve the benchmark on level size n; returns (ViSolution, FeSpace).

    ``nested=True`` warm-starts from the interpolated solution on n/2.
    """
    sys, space = obstacle_system(bench, n, psi)
    U0 = None
    if nested and psi is None:
        U0 = _nested_guess(bench, n, space, solver, tol, options)
    return solve_system(sys, solver, tol, U0=U0, **options), space


# ---------------------------------------------------------------------------
# free boundary


def _triangle_fraction(phi):
    """Area fraction of {phi > 0} for a linear function with vertex values phi."""
    a, b, c = np.sort(phi, axis=1).T
    frac = np.zeros(len(a))
    all_pos = a > 0
    frac[all_pos] = 1.0
    one = (c > 0) & (b <= 0)
    frac[one] = c[one] ** 2 / ((c[one] - a[one]) * (c[one] - b[one]))
    two = (b > 0) & (a <= 0)
    frac[two] = 1.0 - a[two] ** 2 / ((b[two] - a[two]) * (c[two] - a[two]))
    return frac


def extract_free_boundary(space: FeSpace, gap, delta: float) -> FreeBoundaryEstimate:
    """Discrete positivity set {gap > delta} and its interface.

    ``gap`` is the full nodal vector of U_T - I_T psi.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    mesh = space.mesh
    gap = np.asarray(gap, dtype=float)
    phi = gap[mesh.cells] - delta
    X = mesh.vertices[mesh.cells]
    meas = mesh.cell_measures()
    if mesh.dim == 1:
        p0, p1 = phi[:, 0], phi[:, 1]
        frac = np.where((p0 > 0) & (p1 > 0), 1.0, 0.0)
        cross = (p0 > 0) != (p1 > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(cross, p0 / (p0 - p1), 0.0)
        pos_part = np.where(p0 > 0, t, 1.0 - t)
        frac = np.where(cross, pos_part, frac)
        x0, x1 = X[cross, 0, 0], X[cross, 1, 0]
        pts = (x0 + t[cross] * (x1 - x0))[:, None]
    else:
        frac = _triangle_fraction(phi)
        pts = []
        for i, j in ((0, 1), (1, 2), (0, 2)):
            pi, pj = phi[:, i], phi[:, j]
            cross = (pi > 0) != (pj > 0)
            t = pi[cross] / (pi[cross] - pj[cross])
            pts.append(X[cross, i] + t[:, None] * (X[cross, j] - X[cross, i]))
        pts = np.concatenate(pts) if pts else np.empty((0, 2))
    pts = np.unique(np.round(pts, 14), axis=0) if len(pts) else pts.reshape(0, mesh.dim)
    # points on the outer boundary are not part of Gamma_T
    lo = np.asarray(mesh.box[0::2])
    hi = np.asarray(mesh.box[1::2])
    inside = np.all((pts > lo + 1e-14) & (pts < hi - 1e-14), axis=1)
    pts = pts[inside]
    measure = float(np.sum(frac * meas))
    return FreeBoundaryEstimate(delta, np.flatnonzero(frac > 0), measure, pts,
                                mesh, gap, float(np.sum(meas) - measure))


def _margin_box(box, margin):
    lo = np.asarray(box[0::2], dtype=float) + margin
    hi = np.asarray(box[1::2], dtype=float) - margin
    return lo, hi


def interface_metrics(est: FreeBoundaryEstimate, bench: ClassicalBenchmark,
                      margin: float | None = None, samples: int = 40_000):
    """(measure of the symmetric difference, sup distance of Gamma_T to Gamma),
    both restricted to the box shrunk by ``margin`` (default 2h)."""
    mesh = est.mesh
    if margin is None:
        margin = 2.0 * mesh.mesh_size
    lo, hi = _margin_box(bench.box, margin)
    if mesh.dim == 1:
        brk = np.concatenate([mesh.vertices[:, 0], est.gamma_points.ravel(),
                              bench.gamma_points.ravel(), lo, hi])
        brk = np.unique(np.clip(brk, lo[0], hi[0]))
        mid = 0.5 * (brk[1:] + brk[:-1])
        differ = est.contains(mid) != bench.omega_plus(mid)
        sym = float(np.sum(np.diff(brk)[differ]))
    else:
        m = int(math.ceil(math.sqrt(samples)))
        gx = lo[0] + (np.arange(m) + 0.5) * (hi[0] - lo[0]) / m
        gy = lo[1] + (np.arange(m) + 0.5) * (hi[1] - lo[1]) / m
        P = np.column_stack([a.ravel() for a in np.meshgrid(gx, gy)])
        differ = est.contains(P) != bench.omega_plus(P)
        sym = float(differ.mean() * np.prod(hi - lo))
    pts = est.gamma_points
    keep = np.all((pts >= lo) & (pts <= hi), axis=1)
    pts = pts[keep]
    if len(pts) == 0:
        return sym, 0.0
    ref = np.asarray(bench.gamma_points, dtype=float).reshape(-1, mesh.dim)
    if len(ref) == 0:
        return sym, float("inf")
    dist, _ = cKDTree(ref).query(pts)
    return sym, float(dist.max())


def delta_for_level(h: float, c_star: float, w2inf: float) -> float:
    """delta = c_star * h^2 |log h| * |u|_{W^2,inf}."""
    if not 0.0 < h < 1.0:
        raise ValueError(f"need 0 < h < 1, got {h}")
    return c_star * h * h * abs(math.log(h)) * w2inf


def calibrate_c_star(hs, linf_errors, w2inf: float, max_doublings: int = 30) -> float:
    """Smallest 2^k (k >= 0) with linf < 2^k * eta(h) on every given level."""
    c = 1.0
    for _ in range(max_doublings):
        if all(e < delta_for_level(h, c, w2inf) for h, e in zip(hs, linf_errors)):
            return c
        c *= 2.0
    raise ValueError("pointwise bound not met for any admissible c_star")


def growth_probe(bench: ClassicalBenchmark, space: FeSpace, active_nodes,
                 samples: int = 64) -> float:
    """max of (u - psi) over cells touching the discrete contact set, / h^2."""
    mesh = space.mesh
    if mesh.dim != 1:
        raise ValueError("growth probe needs the analytic 1D benchmark")
    touch = np.isin(mesh.cells, active_nodes).any(axis=1)
    X = mesh.vertices[mesh.cells[touch], 0]
    t = np.linspace(0.0, 1.0, samples)
    x = X[:, :1] + t[None, :] * (X[:, 1:] - X[:, :1])
    g = bench.exact_u(x) - bench.psi(x)
    h = mesh.mesh_size
    return float(g.max(initial=0.0) / h ** 2)


def reference_errors(bench: ClassicalBenchmark, space: FeSpace, U):
    """(H1 seminorm, L2, Linf) distances to the overkill reference, measured
    on the reference mesh after interpolating U onto it."""
    mesh_ref, U_ref = bench.reference
    P = prolongation(space.mesh, mesh_ref)
    e = U_ref - P @ np.asarray(U)
    K, M = _ref_matrices(mesh_ref)
    return (float(np.sqrt(max(e @ (K @ e), 0.0))),
            float(np.sqrt(max(e @ (M @ e), 0.0))),
            float(np.abs(e).max()))


def prolongation(coarse: SimplicialMesh, fine: SimplicialMesh) -> sp.csr_matrix:
    if coarse.dim == 1:
        return interval_interpolation_matrix(coarse.vertices[:, 0], fine.vertices[:, 0])
    return structured_interpolation_matrix(coarse, fine.vertices)


_REF_CACHE: dict = {}


def _ref_matrices(mesh):
    key = id(mesh)
    if key not in _REF_CACHE:
        _REF_CACHE.clear()
        _REF_CACHE[key] = (mesh, full_stiffness(mesh), full_mass(mesh))
    return _REF_CACHE[key][1:]
