"""Solvers for the discrete obstacle problem

    U >= psi,   A U - F >= 0,   (A U - F) . (U - psi) = 0

on a set of constrained indices, with A symmetric positive definite.
Unconstrained indices carry ``psi = -inf``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "NO_CONSTRAINT",
    "InputError",
    "NonConvergenceError",
    "ObstacleSystem",
    "ViSolution",
    "KktReport",
    "solve_psor",
    "solve_pdas",
    "solve_brute_force",
    "solve_linear",
    "kkt_report",
    "energy",
    "dump_vector",
    "load_vector",
]

log = logging.getLogger(__name__)

NO_CONSTRAINT = -np.inf


class InputError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, message, residual=np.nan, iterations=0, U=None):
        super().__init__(f"{message} (last residual {residual:.3e} "
                         f"after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations
        self.U = U


@dataclass(eq=False)
class ObstacleSystem:
    A: sp.csr_matrix
    F: np.ndarray
    psi: np.ndarray
    constrained: np.ndarray = field(default=None)

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        psi = np.asarray(self.psi, dtype=float).copy()
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.F.shape != (n,) or psi.shape != (n,):
            raise InputError("dimensions of A, F and psi disagree")
        if np.any(np.isnan(psi)):
            raise InputError("obstacle values must not be NaN")
        if self.constrained is None:
            self.constrained = np.flatnonzero(psi > NO_CONSTRAINT)
        self.constrained = np.unique(np.asarray(self.constrained, dtype=np.int64))
        mask = np.zeros(n, dtype=bool)
        mask[self.constrained] = True
        if np.any(np.isnan(psi[mask])) or np.any(psi[mask] == np.inf):
            raise InputError("obstacle values must be finite or -inf")
        psi[~mask] = NO_CONSTRAINT
        self.psi = psi

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[self.constrained] = True
        return m


@dataclass(frozen=True)
class KktReport:
    infeasibility: float
    stationarity: float
    complementarity: float
    # sign of the multiplier on the active set, (F - AU)+
    dual_infeasibility: float = 0.0

    @property
    def worst(self) -> float:
        return max(self.infeasibility, self.stationarity, self.complementarity,
                   self.dual_infeasibility)

    def __str__(self):
        return (f"kkt infeasibility={self.infeasibility:.3e} "
                f"stationarity={self.stationarity:.3e} "
                f"complementarity={self.complementarity:.3e} "
                f"dual={self.dual_infeasibility:.3e}")


@dataclass(eq=False)
class ViSolution:
    U: np.ndarray
    active_set: np.ndarray
    kkt_residual: float
    iterations: int
    solver_id: str
    report: KktReport = None


def energy(sys: ObstacleSystem, U) -> float:
    return float(0.5 * U @ (sys.A @ U) - sys.F @ U)


def _active(sys, U, tol):
    c = sys.constrained
    return c[U[c] <= sys.psi[c] + tol]


def kkt_report(sys: ObstacleSystem, U, tol: float = 1e-10) -> KktReport:
    """Maxima of (psi - U)+, |AU - F| off the active set, |(AU - F)(U - psi)|,
    and (F - AU)+ on the active set.

    An index is active when U <= psi + tol; unconstrained indices always
    count towards stationarity.
    """
    U = np.asarray(U, dtype=float)
    r = sys.A @ U - sys.F
    mask = sys.mask
    gap = np.where(mask, U - sys.psi, np.inf)
    infeas = float(np.max(np.maximum(-gap[mask], 0.0), initial=0.0))
    active = mask & (gap <= tol)
    stat = float(np.max(np.abs(r[~active]), initial=0.0))
    dual = float(np.max(np.maximum(-r[active], 0.0), initial=0.0))
    comp = float(np.max(np.abs(r[mask] * gap[mask]), initial=0.0))
    return KktReport(infeas, stat, comp, dual)


def _finish(sys, U, iterations, solver_id, tol):
    c = sys.constrained
    U = U.copy()
    U[c] = np.maximum(U[c], sys.psi[c])
    rep = kkt_report(sys, U, tol)
    return ViSolution(U, _active(sys, U, tol), rep.worst, iterations, solver_id, rep)


def _check_spd_diagonal(A):
    d = A.diagonal()
    if np.any(d <= 0.0):
        k = int(np.flatnonzero(d <= 0.0)[0])
        raise InputError(f"matrix is not positive definite (diagonal entry {k} = {d[k]})")
    return d


# ---------------------------------------------------------------------------
# projected SOR


@numba.njit(cache=True)
def _psor_sweeps(indptr, indices, data, diag, F, psi, U, omega, tol, max_iter,
                 energies, record):
    n = U.shape[0]
    change = np.inf
    it = 0
    while it < max_iter:
        change = 0.0
        for i in range(n):
            r = F[i]
            for p in range(indptr[i], indptr[i + 1]):
                r -= data[p] * U[indices[p]]
            cand = U[i] + omega * r / diag[i]
            if cand < psi[i]:
                cand = psi[i]
            d = abs(cand - U[i])
            if d > change:
                change = d
            U[i] = cand
        it += 1
        if record:
            e = 0.0
            for i in range(n):
                s = 0.0
                for p in range(indptr[i], indptr[i + 1]):
                    s += data[p] * U[indices[p]]
                e += 0.5 * U[i] * s - F[i] * U[i]
            energies[it - 1] = e
        if change < tol:
            break
    return it, change


def solve_psor(sys: ObstacleSystem, omega: float = 1.5, tol: float = 1e-10,
               max_iter: int = 1_000_000, U0=None,
               record_energy: bool = False) -> ViSolution:
    """Projected SOR; stops when the max-norm change of a sweep is below tol.

    With ``record_energy`` the quadratic energy after every sweep is stored
    in ``solution.energies``.
    """
    if not 0.0 < omega < 2.0:
        raise InputError(f"relaxation factor must lie in (0, 2), got {omega}")
    A = sys.A
    diag = _check_spd_diagonal(A)
    U = np.zeros(sys.n) if U0 is None else np.array(U0, dtype=float)
    U = np.maximum(U, sys.psi)
    energies = np.empty(max_iter if record_energy else 0)
    it, change = _psor_sweeps(A.indptr.astype(np.int64), A.indices.astype(np.int64),
                              A.data, diag, sys.F, sys.psi, U, float(omega),
                              float(tol), int(max_iter), energies, record_energy)
    if change >= tol:
        raise NonConvergenceError("projected SOR did not converge", change, it, U)
    sol = _finish(sys, U, it, "psor", max(tol, 1e-14))
    if record_energy:
        sol.energies = energies[:it].copy()
    return sol


# ---------------------------------------------------------------------------
# primal-dual active set


def solve_linear(A, b, method: str = "cg", rtol: float = 1e-12,
                 maxiter: int = 100_000, x0=None):
    """Solve an SPD system by Jacobi-preconditioned CG or a sparse direct solve."""
    if b.size == 0:
        return np.zeros(0)
    if method == "direct":
        if A.shape[0] <= 64:
            return la.solve(A.toarray(), b, assume_a="pos")
        return spla.splu(sp.csc_matrix(A)).solve(b)
    if method != "cg":
        raise InputError(f"unknown linear solver {method!r}")
    if not np.any(b):
        return np.zeros_like(b)
    d = A.diagonal()
    if np.any(d <= 0.0):
        raise InputError("reduced system is singular or indefinite")
    M = sp.diags(1.0 / d)
    x, info = spla.cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    if info != 0:
        res = np.linalg.norm(b - A @ x) / np.linalg.norm(b)
        raise NonConvergenceError("conjugate gradients did not converge", res, info)
    return x


def _solve_active(sys, active_mask, linear_solver, x0=None):
    """U = psi on the active set; A_II U_I = F_I - A_IA psi_A elsewhere."""
    U = np.zeros(sys.n)
    U[active_mask] = sys.psi[active_mask]
    inactive = ~active_mask
    A = sys.A
    rhs = sys.F[inactive] - A[inactive][:, active_mask] @ U[active_mask]
    A_II = A[inactive][:, inactive]
    U[inactive] = solve_linear(A_II, rhs, linear_solver,
                               x0=None if x0 is None else x0[inactive])
    lam = np.zeros(sys.n)
    lam[active_mask] = (A[active_mask] @ U - sys.F[active_mask])
    return U, lam


def solve_pdas(sys: ObstacleSystem, tol: float = 1e-10, max_iter: int = 500,
               c: float = 1.0, U0=None, linear_solver: str = "cg",
               patience: int = 3) -> ViSolution:
    """Primal-dual active set iteration.

    Starting from ``U0`` (zero by default) and ``lambda0 = max(A U0 - F, 0)``
    on constrained indices, the active set is ``{lambda + c (psi - U) > 0}``.
    Later sets drop active indices with lambda < -tol and add inactive ones
    with U < psi - tol, which is the same rule with ties kept active.  If the
    number of violations stops decreasing for ``patience`` steps, single
    least-index exchanges are taken until it does (Judice-Pires), which
    makes the method finite for every symmetric positive definite A.
    """
    _check_spd_diagonal(sys.A)
    n = sys.n
    mask = sys.mask
    if U0 is None:
        U = np.zeros(n)
        lam = np.zeros(n)
    else:
        U = np.array(U0, dtype=float)
        lam = np.where(mask, np.maximum(sys.A @ U - sys.F, 0.0), 0.0)
    with np.errstate(invalid="ignore"):
        active = mask & (lam + c * (sys.psi - U) > 0.0)
    best = np.inf
    budget = patience
    seen = set()
    for it in range(1, max_iter + 1):
        U, lam = _solve_active(sys, active, linear_solver, x0=U)
        drop = active & (lam < -tol)
        add = mask & ~active & (U < sys.psi - tol)
        viol = drop | add
        nviol = int(viol.sum())
        if nviol == 0:
            return _finish(sys, U, it, "pdas", tol)
        key = active.tobytes()
        if nviol < best:
            best = nviol
            budget = patience
        else:
            budget -= 1
        if budget <= 0 or key in seen:
            k = int(np.flatnonzero(viol)[0])
            active[k] = not active[k]
            log.debug("pdas: single exchange at index %d", k)
        else:
            active = (active & ~drop) | add
        seen.add(key)
    res = kkt_report(sys, U, tol).worst
    raise NonConvergenceError("primal-dual active set did not converge", res, max_iter, U)


# ---------------------------------------------------------------------------
# brute force


def solve_brute_force(sys: ObstacleSystem, tol: float = 1e-12) -> ViSolution:
    """Enumerate every active set of the constrained indices (small n only)."""
    c = sys.constrained
    if len(c) > 16:
        raise InputError("brute force limited to 16 constrained indices")
    A = sys.A.toarray()
    found = None
    count = 0
    for bits in itertools.product((False, True), repeat=len(c)):
        active = np.zeros(sys.n, dtype=bool)
        active[c[np.array(bits, dtype=bool)]] = True
        inactive = ~active
        U = np.where(active, sys.psi, 0.0)
        if inactive.any():
            rhs = sys.F[inactive] - A[np.ix_(inactive, active)] @ U[active]
            U[inactive] = la.solve(A[np.ix_(inactive, inactive)], rhs, assume_a="pos")
        r = A @ U - sys.F
        scale = tol * max(1.0, np.abs(sys.F).max(initial=0.0), np.abs(U).max())
        ok = (np.all(r[active] >= -scale)
              and np.all(U[inactive & sys.mask] >= sys.psi[inactive & sys.mask] - scale))
        if ok:
            count += 1
            if found is None:
                found = U
    if found is None:
        raise InputError("no complementary solution found")
    return _finish(sys, found, count, "brute", tol)


# ---------------------------------------------------------------------------
# OBSVEC v1


def dump_vector(U) -> str:
    U = np.asarray(U, dtype=float)
    return f"OBSVEC v1\n{U.size}\n" + "".join(f"{v:.17g}\n" for v in U)


def load_vector(text: str) -> np.ndarray:
    lines = text.split("\n")
    if lines[0] != "OBSVEC v1":
        raise InputError("not an OBSVEC v1 file")
    n = int(lines[1])
    return np.array([float(v) for v in lines[2:2 + n]])
