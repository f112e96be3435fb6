import math

import numpy as np
import pytest

from obstakl import classical
from obstakl.assembly import FeSpace, assemble_stiffness, energy_norm_error
from obstakl.classical import (FreeBoundaryEstimate, benchmark_1d, benchmark_2d,
                               calibrate_c_star, delta_for_level, extract_free_boundary,
                               interface_metrics, problem_2d, solve_classical)
from obstakl.mesh import uniform_interval_mesh


@pytest.fixture(scope="module")
def bench():
    return benchmark_1d()


def test_benchmark_values(bench):
    assert bench.exact_u(0.5) == pytest.approx(1 / 16)
    for x in (0.25, 0.75):
        assert bench.exact_u(x) == 0 and bench.exact_grad(x) == 0
    # multiplier on the contact set: -u'' - f = 0 - (-1)
    x = np.array([0.1, 0.2, 0.8, 0.95])
    np.testing.assert_allclose(-bench.exact_laplacian(x) - bench.f(x), 1.0)
    assert bench.complementarity_residual(np.linspace(0, 1, 1001)) < 1e-15
    assert bench.w2inf_seminorm == 8.0


def test_w2inf_matches_sampled_second_derivative(bench):
    x = np.linspace(0.25, 0.75, 100001)
    # the supremum is approached at the free boundary, excluded from the open set
    assert np.abs(bench.exact_laplacian(x)).max() == pytest.approx(8.0, rel=1e-3)


@pytest.mark.parametrize("solver", ["psor", "pdas"])
def test_small_solve_certificate(bench, solver):
    sol, space = solve_classical(bench, 8, solver=solver, tol=1e-12)
    assert sol.kkt_residual <= 1e-9
    assert np.all(sol.U >= 0)


def test_solvers_agree(bench):
    a, _ = solve_classical(bench, 64, solver="psor", tol=1e-13, omega=1.9)
    b, _ = solve_classical(bench, 64, solver="pdas", tol=1e-12)
    assert np.abs(a.U - b.U).max() <= 1e-8


def test_inactive_obstacle_is_linear_fem(bench):
    n = 16
    sol, space = solve_classical(bench, n, psi=lambda x: np.full_like(x, -1e6))
    A = assemble_stiffness(space).toarray()
    sys, _ = classical.obstacle_system(bench, n)
    np.testing.assert_allclose(sol.U, np.linalg.solve(A, sys.F), atol=1e-12)


def _h1_error(bench, n):
    sol, space = solve_classical(bench, n, tol=1e-12)
    return energy_norm_error(space, space.expand(sol.U), bench.exact_grad)


def test_energy_rate_between_levels(bench):
    ratio = _h1_error(bench, 16) / _h1_error(bench, 32)
    assert 1.7 <= ratio <= 2.3


def test_nested_solve_matches_cold(bench):
    a, _ = solve_classical(bench, 128, tol=1e-12)
    b, _ = solve_classical(bench, 128, tol=1e-12, nested=True)
    np.testing.assert_allclose(a.U, b.U, atol=1e-12)


def test_extract_hat():
    space = FeSpace.classical(uniform_interval_mesh(0, 1, 2))
    est = extract_free_boundary(space, [0.0, 1.0, 0.0], 0.5)
    np.testing.assert_allclose(est.gamma_points.ravel(), [0.25, 0.75])
    assert est.omega_plus_measure == pytest.approx(0.5)


def test_extract_trivial_cases():
    space = FeSpace.classical(uniform_interval_mesh(0, 1, 4))
    est = extract_free_boundary(space, [0.1, 0.2, 0.3, 0.2, 0.1], 0.0)
    assert est.omega_plus_measure == pytest.approx(1.0)
    assert est.gamma_points.size == 0
    est = extract_free_boundary(space, [0.1, 0.2, 0.3, 0.2, 0.1], 0.5)
    assert est.omega_plus_measure == 0 and est.gamma_points.size == 0
    with pytest.raises(ValueError):
        extract_free_boundary(space, np.zeros(5), -1.0)


def test_extract_triangle_measure():
    # gap = x on the unit square, threshold 0.3 -> area 0.7, interface on x = 0.3
    mesh = classical.build_mesh(problem_2d(), 10)
    space = FeSpace.classical(mesh)
    est = extract_free_boundary(space, mesh.vertices[:, 0], 0.3)
    assert est.omega_plus_measure == pytest.approx(0.7, rel=1e-12)
    np.testing.assert_allclose(est.gamma_points[:, 0], 0.3)


def _estimate_with_interval(a, b):
    """Estimate on a fine grid whose positive set is exactly (a, b)."""
    space = FeSpace.classical(uniform_interval_mesh(0, 1, 100))
    x = space.mesh.vertices[:, 0]
    gap = np.minimum(x - a, b - x)
    return extract_free_boundary(space, gap, 0.0)


def test_interface_metrics_examples(bench):
    est = _estimate_with_interval(0.24, 0.76)
    np.testing.assert_allclose(est.gamma_points.ravel(), [0.24, 0.76], atol=1e-14)
    sym, dist = interface_metrics(est, bench, margin=0.0)
    assert dist == pytest.approx(0.01, abs=1e-14)
    assert sym == pytest.approx(0.02, abs=1e-14)


def test_interface_metrics_exact_set(bench):
    est = _estimate_with_interval(0.25, 0.75)
    assert interface_metrics(est, bench, margin=0.0) == pytest.approx((0.0, 0.0), abs=1e-14)


def test_delta_examples():
    assert delta_for_level(0.1, 1, 1) == pytest.approx(0.01 * math.log(10), rel=1e-14)
    assert delta_for_level(0.1, 0, 1) == 0
    assert delta_for_level(0.1, 1, 2) == 2 * delta_for_level(0.1, 1, 1)
    for h in (0.0, 1.0, 2.0):
        with pytest.raises(ValueError):
            delta_for_level(h, 1, 1)


def test_calibrate_c_star():
    hs = [0.1, 0.05]
    eta = [delta_for_level(h, 1, 1) for h in hs]
    assert calibrate_c_star(hs, [0.5 * e for e in eta], 1) == 1
    assert calibrate_c_star(hs, [3.0 * e for e in eta], 1) == 4


def test_pointwise_error_within_calibrated_delta(bench):
    for n in (16, 32, 64):
        sol, space = solve_classical(bench, n, tol=1e-12)
        err = np.abs(space.expand(sol.U) - bench.exact_u(space.mesh.vertices[:, 0])).max()
        assert err < delta_for_level(1 / n, 1.0, bench.w2inf_seminorm)


@pytest.fixture(scope="module")
def small_2d():
    return benchmark_2d(reference_n=64)


def test_2d_reference_symmetry(small_2d):
    mesh, U = small_2d.reference
    G = U.reshape(65, 65)
    for H in (G.T, G[::-1], G[:, ::-1], G[::-1, ::-1]):
        assert np.abs(G - H).max() <= 1e-9


def test_2d_reference_feasible_with_contact(small_2d):
    mesh, U = small_2d.reference
    psi = small_2d.psi(*mesh.vertices.T)
    interior = np.setdiff1d(np.arange(mesh.n_vertices), mesh.boundary_nodes)
    assert np.all(U[interior] >= psi[interior])
    contact = interior[np.isclose(U[interior], psi[interior], atol=1e-12)]
    assert contact.size > 0
    # Gamma of the reference lies inside the square, around the bump
    r = np.hypot(*(small_2d.gamma_points - 0.5).T)
    assert r.size > 0 and r.max() < 0.5


def test_2d_reference_errors_shrink(small_2d):
    errs = []
    for n in (8, 16):
        sol, space = solve_classical(small_2d, n, tol=1e-12)
        errs.append(classical.reference_errors(small_2d, space, space.expand(sol.U))[0])
    assert errs[0] / errs[1] > 1.5


def test_growth_probe(bench):
    sol, space = solve_classical(bench, 64, tol=1e-12)
    active = space.free[sol.active_set]
    g = classical.growth_probe(bench, space, active)
    assert 0 < g < 10


def test_free_boundary_estimate_value_at():
    space = FeSpace.classical(uniform_interval_mesh(0, 1, 2))
    est = extract_free_boundary(space, [0.0, 1.0, 0.0], 0.5)
    assert isinstance(est, FreeBoundaryEstimate)
    np.testing.assert_allclose(est.value_at([0.25, 0.5]), [0.5, 1.0])
    assert est.contains([0.5, 0.1]).tolist() == [True, False]
