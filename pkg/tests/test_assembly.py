import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from obstakl.assembly import (AssemblyError, FeSpace, assemble_load,
                              assemble_mass_plus_stiffness, assemble_stiffness,
                              assemble_weighted_stiffness, axial_element_matrices,
                              dump_matrix, energy_norm_error, extension_constant,
                              full_mass, full_stiffness, interpolate_nodal,
                              l2_norm_error, linf_norm_error)
from obstakl.mesh import (SimplicialMesh, cylinder_mesh, graded_partition,
                          structured_triangle_mesh, uniform_interval_mesh)


def dense(A):
    return A.toarray()


def test_stiffness_one_free_node():
    A = assemble_stiffness(FeSpace.classical(uniform_interval_mesh(0, 1, 2)))
    assert dense(A).tolist() == [[4.0]]


def test_stiffness_tridiagonal_pattern():
    A = dense(assemble_stiffness(FeSpace.classical(uniform_interval_mesh(0, 1, 4))))
    np.testing.assert_allclose(A, [[8, -4, 0], [-4, 8, -4], [0, -4, 8]], atol=1e-13)


def test_stiffness_square_single_free_node():
    A = dense(assemble_stiffness(FeSpace.classical(structured_triangle_mesh((0, 1, 0, 1), 2))))
    np.testing.assert_allclose(A, [[4.0]], atol=1e-14)


def test_stiffness_is_five_point_stencil():
    n = 6
    A = dense(assemble_stiffness(FeSpace.classical(structured_triangle_mesh((0, 1, 0, 1), n))))
    T = 2 * np.eye(n - 1) - np.eye(n - 1, k=1) - np.eye(n - 1, k=-1)
    np.testing.assert_allclose(A, np.kron(np.eye(n - 1), T) + np.kron(T, np.eye(n - 1)),
                               atol=1e-13)


def test_mass_plus_stiffness_single_interval():
    mesh = SimplicialMesh([0.0, 1.0], [(0, 1)], [0, 1])
    A = dense(assemble_mass_plus_stiffness(FeSpace.thin(mesh)))
    np.testing.assert_allclose(A, [[4 / 3, -5 / 6], [-5 / 6, 4 / 3]], atol=1e-15)


@pytest.mark.parametrize("mesh", [uniform_interval_mesh(0, 2, 7),
                                  structured_triangle_mesh((0, 1, 0, 3), 5)],
                         ids=["1d", "2d"])
def test_mass_row_sums_and_linearity(mesh):
    M = full_mass(mesh)
    rows = np.asarray(M.sum(axis=1)).ravel()
    # row sum of the mass matrix = integral of the hat function
    hat = np.zeros(mesh.n_vertices)
    np.add.at(hat, mesh.cells, mesh.cell_measures()[:, None] / (mesh.dim + 1))
    np.testing.assert_allclose(rows, hat, rtol=1e-13)
    assert rows.sum() == pytest.approx(mesh.cell_measures().sum(), rel=1e-13)
    sp_ = FeSpace.thin(mesh)
    np.testing.assert_allclose(dense(assemble_mass_plus_stiffness(sp_)) - dense(full_stiffness(mesh)),
                               dense(M), atol=1e-12)


@given(st.integers(1, 12), st.integers(1, 40))
def test_stiffness_invariants(n2, n1):
    for mesh in (uniform_interval_mesh(0, 1, n1), structured_triangle_mesh((0, 1, 0, 1), n2)):
        K = full_stiffness(mesh)
        np.testing.assert_allclose(np.asarray(K.sum(axis=1)).ravel(), 0, atol=1e-12)
        for A in (assemble_stiffness(FeSpace.classical(mesh)),
                  assemble_mass_plus_stiffness(FeSpace.thin(mesh))):
            if A.shape[0] == 0:
                continue
            A = dense(A)
            assert np.array_equal(A, A.T)
            np.linalg.cholesky(A)


def test_degenerate_cell_rejected():
    mesh = SimplicialMesh([(0, 0), (1, 0), (2, 0)], [(0, 1, 2)], [0, 1, 2])
    with pytest.raises(AssemblyError, match="cell 0"):
        assemble_stiffness(FeSpace.thin(mesh))


def _tensor_oracle(base_n, nodes):
    """Independent dense assembly of the unweighted P1 x P1 stiffness."""
    def one_d(x):
        n = len(x)
        K = np.zeros((n, n))
        M = np.zeros((n, n))
        for k in range(n - 1):
            h = x[k + 1] - x[k]
            idx = [k, k + 1]
            K[np.ix_(idx, idx)] += np.array([[1, -1], [-1, 1]]) / h
            M[np.ix_(idx, idx)] += np.array([[2, 1], [1, 2]]) * h / 6
        return K, M
    Kx, Mx = one_d(np.linspace(0, 1, base_n + 1))
    Ky, My = one_d(np.asarray(nodes))
    return np.kron(My, Kx) + np.kron(Ky, Mx)


def test_alpha_zero_equals_tensor_stiffness():
    part = graded_partition(2.0, 5, 2.5)
    cyl = cylinder_mesh(uniform_interval_mesh(0, 1, 4), part)
    A = dense(assemble_weighted_stiffness(cyl, 0.0))
    full = _tensor_oracle(4, part.nodes)
    free = FeSpace.cylinder(cyl).free
    np.testing.assert_allclose(A, full[np.ix_(free, free)], atol=1e-14)


@pytest.mark.parametrize("alpha", [-1.0, 1.0, 1.5])
def test_weighted_rejects_alpha(alpha):
    with pytest.raises(AssemblyError):
        axial_element_matrices(0.0, 1.0, alpha)


def test_weighted_rejects_degenerate_interval():
    with pytest.raises(AssemblyError):
        axial_element_matrices([0.0, 0.5], [0.5, 0.5], 0.3)


def _mp_moment(a, b, alpha, poly):
    mp.mp.dps = 30
    a, b = mp.mpf(a), mp.mpf(b)
    pts = [a, b] if a > 0 else [a, b * mp.mpf(10) ** -10, b * mp.mpf(10) ** -5, b]
    return float(mp.quad(lambda y: y ** alpha * poly(y), pts))


@pytest.mark.parametrize("alpha", [-0.5, 0.0, 0.5])
@pytest.mark.parametrize("a,b", [(0.0, 1.0), (0.0, 1e-6), (0.3, 0.31), (2.0, 7.5), (1e3, 1e3 + 1e-3)])
def test_axial_matrices_against_quadrature(alpha, a, b):
    m, s = axial_element_matrices(a, b, alpha)
    h = b - a
    lo = lambda y: (b - y) / h
    hi = lambda y: (y - a) / h
    ref = [_mp_moment(a, b, alpha, lambda y: lo(y) ** 2),
           _mp_moment(a, b, alpha, lambda y: lo(y) * hi(y)),
           _mp_moment(a, b, alpha, lambda y: hi(y) ** 2),
           _mp_moment(a, b, alpha, lambda y: 1 / h ** 2)]
    got = [m[0, 0, 0], m[0, 0, 1], m[0, 1, 1], s[0, 0, 0]]
    np.testing.assert_allclose(got, ref, rtol=1e-12)
    assert s[0, 0, 1] == -s[0, 0, 0]


@given(st.floats(-0.95, 0.95))
def test_axial_unit_interval_closed_forms(alpha):
    m, s = axial_element_matrices(0.0, 1.0, alpha)
    assert s[0, 0, 0] == pytest.approx(1 / (1 + alpha), rel=1e-12)
    expected = 2 / ((alpha + 1) * (alpha + 2) * (alpha + 3))
    assert m[0, 0, 0] == pytest.approx(expected, rel=1e-12)
    assert m[0, 1, 1] == pytest.approx(1 / (alpha + 3), rel=1e-12)


def test_extension_constant():
    assert extension_constant(0.5) == pytest.approx(1.0, rel=1e-15)
    for s in (0.25, 0.75):
        ref = 2 ** (1 - 2 * s) * mp.gamma(1 - s) / mp.gamma(s)
        assert extension_constant(s) == pytest.approx(float(ref), rel=1e-14)


def test_load_examples():
    space = FeSpace.classical(uniform_interval_mesh(0, 1, 2))
    np.testing.assert_allclose(assemble_load(space, lambda x: 1.0 + 0 * x), [0.5])
    np.testing.assert_array_equal(assemble_load(space, lambda x: 0 * x), [0.0])
    np.testing.assert_allclose(assemble_load(space, np.ones(3)), [0.5])


def test_load_rejects_nonfinite():
    space = FeSpace.classical(uniform_interval_mesh(0, 1, 4))
    with pytest.raises(AssemblyError):
        assemble_load(space, lambda x: np.where(x > 0.5, np.inf, 1.0))


def test_cylinder_load_lives_on_trace():
    cyl = cylinder_mesh(uniform_interval_mesh(0, 1, 8), graded_partition(1, 6, 3))
    space = FeSpace.cylinder(cyl)
    F = assemble_load(space, lambda x: np.sin(np.pi * x), scale=2.0)
    y = space.coordinates()[space.free, 1]
    assert np.all(F[y > 0] == 0)
    assert np.all(F[y == 0] > 0)
    np.testing.assert_array_equal(space.trace_positions(), np.flatnonzero(y == 0))


def test_interpolation_examples():
    space = FeSpace.classical(uniform_interval_mesh(0, 1, 2))
    np.testing.assert_allclose(interpolate_nodal(space, lambda x: x ** 2), [0, 0.25, 1])
    mesh = structured_triangle_mesh((0, 1, 0, 1), 4)
    sp2 = FeSpace.classical(mesh)
    lin = lambda x, y: 3 * x - 2 * y + 1
    U = interpolate_nodal(sp2, lin)
    assert l2_norm_error(sp2, U, lin) < 1e-14
    assert linf_norm_error(sp2, U, lin) < 1e-14
    assert energy_norm_error(sp2, U, lambda x, y: (3 + 0 * x, -2 + 0 * y)) < 1e-13


def _sin_interpolation_error(n):
    space = FeSpace.classical(uniform_interval_mesh(0, 1, n))
    U = interpolate_nodal(space, lambda x: np.sin(np.pi * x))
    return energy_norm_error(space, U, lambda x: np.pi * np.cos(np.pi * x)), U


def test_energy_error_matches_fine_quadrature():
    err, U = _sin_interpolation_error(8)
    x = np.linspace(0, 1, 9)
    total = 0.0
    for k in range(8):
        slope = (U[k + 1] - U[k]) * 8
        total += quad(lambda t: (np.pi * np.cos(np.pi * t) - slope) ** 2, x[k], x[k + 1],
                      epsabs=1e-15, epsrel=1e-13)[0]
    assert err == pytest.approx(math.sqrt(total), rel=1e-8)


def test_energy_error_halves():
    ratio = _sin_interpolation_error(16)[0] / _sin_interpolation_error(32)[0]
    assert 1.8 <= ratio <= 2.2


def test_dump_matrix_sorted():
    A = assemble_stiffness(FeSpace.classical(uniform_interval_mesh(0, 1, 3)))
    text = dump_matrix(A)
    assert text.splitlines()[0] == "0 0 6"
    assert text.splitlines()[1] == "0 1 -3"
