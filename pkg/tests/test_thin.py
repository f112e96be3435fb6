import numpy as np
import pytest

from obstakl.thin import (default_problem, reference_errors, signorini_report,
                          solve_thin, thin_reference, thin_system)
from obstakl.vi_solver import solve_brute_force


@pytest.fixture(scope="module")
def prob():
    return default_problem()


def test_inactive_obstacle_is_linear_solve(prob):
    sol, space = solve_thin(prob, 8, g=lambda x, y: np.full_like(x, -1e6))
    sys, _ = thin_system(prob, 8)
    np.testing.assert_allclose(sol.U, np.linalg.solve(sys.A.toarray(), sys.F), atol=1e-12)
    assert sol.active_set.size == 0


def test_unit_obstacle_against_brute_force(prob):
    one = lambda x, y: np.ones_like(x)
    zero = lambda x, y: np.zeros_like(x)
    p = type(prob)(prob.box, zero, one)
    sys, space = thin_system(p, 2)
    ref = solve_brute_force(sys).U
    for solver in ("pdas", "psor"):
        sol, _ = solve_thin(p, 2, solver=solver, tol=1e-13)
        np.testing.assert_allclose(sol.U, ref, atol=1e-10)
    # the boundary sits on the obstacle, the centre sags below it
    pos = space.trace_positions()
    np.testing.assert_allclose(ref[pos], 1.0, atol=1e-12)
    assert 0 < ref[4] < 1


@pytest.mark.parametrize("solver", ["pdas", "psor"])
def test_certificate(prob, solver):
    sol, space = solve_thin(prob, 16, solver=solver, tol=1e-12)
    assert sol.report.worst <= 1e-8
    assert 0 < len(sol.active_set) < len(space.trace)
    g = prob.g(*space.coordinates()[space.trace].T)
    assert np.all(sol.U[space.trace_positions()] >= g)


def test_solvers_agree(prob):
    a, _ = solve_thin(prob, 16, "pdas", 1e-12)
    b, _ = solve_thin(prob, 16, "psor", 1e-13, omega=1.7)
    assert np.abs(a.U - b.U).max() <= 1e-8


def test_report_examples(prob):
    sys, space = thin_system(prob, 8)
    pos = space.trace_positions()
    g = sys.psi[pos]
    # U = g on the boundary, zero inside: every product vanishes
    U = np.zeros(space.n_free)
    U[pos] = g
    rep = signorini_report(space, U, g, sys.A, sys.F)
    assert rep.complementarity == 0 and rep.infeasibility == 0
    # lifting one boundary node off the obstacle gives a nonzero product
    z = int(pos[5])
    U[z] += 0.1
    rep2 = signorini_report(space, U, g, sys.A, sys.F)
    flux = (sys.A @ U - sys.F)[z]
    assert rep2.complementarity == pytest.approx(abs(flux) * 0.1, rel=1e-12)
    assert rep2.complementarity > 0
    # and a converged solve passes
    sol, _ = solve_thin(prob, 8, tol=1e-12)
    assert signorini_report(space, sol.U, g, sys.A, sys.F, 1e-12).worst <= 1e-10


def test_rate_against_reference(prob):
    ref = thin_reference(64)
    errs = []
    for n in (8, 16):
        sol, space = solve_thin(prob, n, tol=1e-12)
        errs.append(reference_errors(space, sol.U, ref)[0])
    assert 1.6 <= errs[0] / errs[1] <= 2.4


def test_nested_equals_cold(prob):
    a, _ = solve_thin(prob, 32, tol=1e-12, linear_solver="direct")
    b, _ = solve_thin(prob, 32, tol=1e-12, nested=True, linear_solver="direct")
    np.testing.assert_allclose(a.U, b.U, atol=1e-12)
