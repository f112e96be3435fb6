"""Thin (Signorini) obstacle problem for -Laplace + I with U >= g on the boundary."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .assembly import (FeSpace, assemble_load, assemble_mass_plus_stiffness,
                       full_mass, full_stiffness, interpolate_nodal)
from .mesh import structured_interpolation_matrix, structured_triangle_mesh
from .vi_solver import KktReport, ObstacleSystem
from .classical import solve_system

__all__ = [
    "ThinProblem",
    "default_problem",
    "thin_system",
    "solve_thin",
    "signorini_report",
    "thin_reference",
    "reference_errors",
]


@dataclass(frozen=True, eq=False)
class ThinProblem:
    box: tuple
    f: Callable
    g: Callable
    name: str = "thin"


def _g_default(x, y):
    return 0.5 - 4.0 * ((x - 0.5) ** 2 + (y - 0.5) ** 2)


def default_problem() -> ThinProblem:
    """Unit square, f = -1; the boundary obstacle peaks at the edge midpoints
    and drops below the free solution towards the corners."""
    return ThinProblem(
        box=(0.0, 1.0, 0.0, 1.0),
        f=lambda x, y: -np.ones_like(np.asarray(x, dtype=float)),
        g=_g_default,
    )


def thin_system(prob: ThinProblem, n_per_side: int, g=None):
    space = FeSpace.thin(structured_triangle_mesh(prob.box, n_per_side))
    A = assemble_mass_plus_stiffness(space)
    F = assemble_load(space, prob.f)
    gv = interpolate_nodal(space, prob.g if g is None else g)
    if not np.all(np.isfinite(gv[space.trace])):
        raise ValueError("boundary obstacle must be finite at boundary nodes")
    psi = np.full(space.n_free, -np.inf)
    pos = space.trace_positions()
    psi[pos] = gv[space.trace]
    return ObstacleSystem(A, F, psi, pos), space


def solve_thin(prob: ThinProblem, n_per_side: int, solver: str = "pdas",
               tol: float = 1e-10, g=None, nested: bool = False, **options):
    """Returns (ViSolution, FeSpace); every node is a free dof."""
    sys, space = thin_system(prob, n_per_side, g)
    U0 = None
    if nested and g is None and n_per_side > 16 and n_per_side % 2 == 0:
        coarse, cspace = solve_thin(prob, n_per_side // 2, solver, tol,
                                    nested=True, **options)
        U0 = structured_interpolation_matrix(cspace.mesh, space.coordinates()) @ coarse.U
    sol = solve_system(sys, solver, tol, U0=U0, **options)
    sol.report = signorini_report(space, sol.U, sys.psi[space.trace_positions()],
                                  sys.A, sys.F, tol)
    return sol, space


def signorini_report(space: FeSpace, U, g_values, A, F, tol: float = 1e-10) -> KktReport:
    """Signorini certificate on the boundary nodes.

    With the discrete flux z = (A U - F) at boundary nodes this mirrors
    ``kkt_report``: (g - U)+, |z| off contact, |z (U - g)| and (-z)+ on
    contact.
    """
    U = np.asarray(U, dtype=float)
    pos = space.trace_positions()
    z = (A @ U - F)[pos]
    gap = U[pos] - np.asarray(g_values, dtype=float)
    infeas = float(np.max(np.maximum(-gap, 0.0), initial=0.0))
    contact = gap <= tol
    flux = float(np.max(np.abs(z[~contact]), initial=0.0))
    dual = float(np.max(np.maximum(-z[contact], 0.0), initial=0.0))
    comp = float(np.max(np.abs(z * gap), initial=0.0))
    return KktReport(infeas, flux, comp, dual)


@functools.lru_cache(maxsize=2)
def thin_reference(n_per_side: int = 512, tol: float = 1e-12):
    """Overkill reference (mesh, U) for the default problem."""
    sol, space = solve_thin(default_problem(), n_per_side, "pdas", tol,
                            nested=True, linear_solver="direct")
    return space.mesh, sol.U


def reference_errors(space: FeSpace, U, reference):
    """(H1 norm, L2, Linf) of the difference on the reference mesh."""
    mesh_ref, U_ref = reference
    P = structured_interpolation_matrix(space.mesh, mesh_ref.vertices)
    e = U_ref - P @ np.asarray(U)
    K, M = _matrices(mesh_ref)
    l2 = float(np.sqrt(max(e @ (M @ e), 0.0)))
    h1 = float(np.sqrt(max(e @ (K @ e), 0.0) + l2 * l2))
    return h1, l2, float(np.abs(e).max())


_CACHE: dict = {}


def _matrices(mesh):
    key = id(mesh)
    if key not in _CACHE:
        _CACHE.clear()
        _CACHE[key] = (mesh, full_stiffness(mesh), full_mass(mesh))
    return _CACHE[key][1:]
