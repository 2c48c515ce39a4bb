from math import factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glsobstacle.benchmarks import get_case
from glsobstacle.fespace import (
    REF_NODES,
    build_space,
    eval_basis,
    evaluate,
    gauss_line,
    interpolate,
    quad_rule,
    transfer,
)
from glsobstacle.mesh import build_lshape_mesh, build_square_mesh, refine


def integrate_ref(rule, fn):
    x, y = rule.xy[:, 0], rule.xy[:, 1]
    return float(rule.weights @ fn(x, y))


def monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("degree", [1, 2, 6])
def test_rule_basics(degree):
    rule = quad_rule(degree)
    assert rule.degree >= degree
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert np.all(rule.weights > 0)
    np.testing.assert_allclose(rule.points.sum(axis=1), 1.0, atol=1e-15)
    assert np.all(rule.points >= 0)


def test_rule_examples():
    rule = quad_rule(6)
    assert integrate_ref(rule, lambda x, y: np.ones_like(x)) == pytest.approx(1 / 2, abs=1e-15)
    assert integrate_ref(rule, lambda x, y: x) == pytest.approx(1 / 6, abs=1e-15)
    assert integrate_ref(rule, lambda x, y: x**2 * y**2) == pytest.approx(1 / 180, abs=1e-15)


@pytest.mark.parametrize("degree", [1, 2, 6])
def test_rule_exactness(degree):
    rule = quad_rule(degree)
    for a in range(rule.degree + 1):
        for b in range(rule.degree + 1 - a):
            got = integrate_ref(rule, lambda x, y: x**a * y**b)
            assert got == pytest.approx(monomial_integral(a, b), rel=1e-13, abs=1e-16)


def test_unsupported_degree():
    with pytest.raises(ValueError):
        quad_rule(7)


def test_gauss_line_exact_to_degree_five():
    t, w = gauss_line(3)
    for k in range(6):
        assert w @ t**k == pytest.approx(1 / (k + 1), rel=1e-14)


def test_lagrange_property():
    values = eval_basis(REF_NODES)[0]
    np.testing.assert_allclose(values, np.eye(6), atol=1e-15)


points = st.tuples(st.floats(0, 1), st.floats(0, 1)).map(
    lambda p: (p[0], p[1]) if p[0] + p[1] <= 1 else (1 - p[0], 1 - p[1])
)


@given(points)
def test_partition_of_unity(p):
    values, grads, hess = eval_basis(np.array(p))
    assert values.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(grads.sum(axis=0), 0.0, atol=1e-13)
    np.testing.assert_allclose(hess.sum(axis=0), 0.0, atol=1e-13)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    p = rng.uniform(0.1, 0.4, 2)
    _, grads, hess = eval_basis(p)
    h = 1e-6
    for a in range(2):
        e = np.zeros(2)
        e[a] = h
        fd = (eval_basis(p + e)[0] - eval_basis(p - e)[0]) / (2 * h)
        np.testing.assert_allclose(grads[:, a], fd, atol=1e-8)
        fd2 = (eval_basis(p + e)[1] - eval_basis(p - e)[1]) / (2 * h)
        np.testing.assert_allclose(hess[:, :, a], fd2, atol=1e-7)


def test_space_n1():
    space = build_space(build_square_mesh(1))
    assert space.n_dofs == 9
    assert len(space.dirichlet_dofs) == 8
    free = np.flatnonzero(~space.dirichlet_mask)
    np.testing.assert_allclose(space.node_coords[free], [[0.0, 0.0]])


def test_space_n2():
    space = build_space(build_square_mesh(2))
    assert space.n_dofs == 25
    assert space.n_dofs == space.mesh.n_vertices + space.mesh.n_edges


@pytest.mark.parametrize("mesh", [build_square_mesh(3), refine(build_lshape_mesh(1), [0, 7, 11])])
def test_dof_map_consistency(mesh):
    space = build_space(mesh)
    assert all(len(set(row)) == 6 for row in space.dof_map)
    # local nodes map to the right physical coordinates
    p = mesh.vertices[mesh.cells]
    expected = np.concatenate(
        [p, 0.5 * (p[:, [0, 1, 2]] + p[:, [1, 2, 0]])], axis=1
    )
    np.testing.assert_allclose(space.node_coords[space.dof_map], expected)
    # Dirichlet iff the node lies on a boundary edge
    m = mesh
    on_boundary = np.zeros(space.n_dofs, dtype=bool)
    b = np.flatnonzero(m.boundary_edges)
    on_boundary[m.edges[b].ravel()] = True
    on_boundary[m.n_vertices + b] = True
    np.testing.assert_array_equal(space.dirichlet_mask, on_boundary)


def test_cell_areas_from_quadrature():
    mesh = refine(build_lshape_mesh(1), [0, 3, 9])
    space = build_space(mesh)
    jxw = space.tabulation[2]
    np.testing.assert_allclose(jxw.sum(axis=1), mesh.signed_areas, rtol=1e-12)


def test_interpolate_constant():
    space = build_space(build_square_mesh(2))
    u = interpolate(lambda x, y: 3.5, space)
    assert np.all(u == 3.5)
    value, grad, lap = evaluate(u, space, np.arange(8), np.array([0.2, 0.3]))
    np.testing.assert_allclose(value, 3.5)
    np.testing.assert_allclose(grad, 0.0, atol=1e-14)


def test_interpolate_reproduces_quadratics():
    space = build_space(refine(build_square_mesh(2), [1, 4]))
    u = interpolate(lambda x, y: x**2, space)
    phi, _, _, xq = space.tabulation
    uq = space.local(u) @ phi.T
    np.testing.assert_allclose(uq, xq[..., 0] ** 2, atol=1e-12)


def test_interpolate_smooth_solution_at_corner():
    space = build_space(build_square_mesh(2))
    u = interpolate(get_case("smooth").exact_u, space)
    corner = np.flatnonzero(np.all(space.node_coords == 1.0, axis=1))[0]
    assert u[corner] == pytest.approx(961 / 256, rel=1e-15)


def test_evaluate_linear_field():
    space = build_space(refine(build_square_mesh(2), [2]))
    u = interpolate(lambda x, y: x + y, space)
    cells = np.arange(space.mesh.n_cells)
    _, grad, lap = evaluate(u, space, cells, np.array([1 / 3, 1 / 3]))
    np.testing.assert_allclose(grad, 1.0, atol=1e-13)
    np.testing.assert_allclose(lap, 0.0, atol=1e-12)


def test_evaluate_quadratic_laplacian():
    space = build_space(refine(build_lshape_mesh(1), [0, 5]))
    u = interpolate(lambda x, y: x**2, space)
    cells = np.arange(space.mesh.n_cells)
    _, _, lap = evaluate(u, space, cells, np.array([0.1, 0.2]))
    np.testing.assert_allclose(lap, 2.0, atol=1e-10)


def test_evaluate_at_vertex_node():
    space = build_space(build_square_mesh(2))
    u = np.random.default_rng(0).standard_normal(space.n_dofs)
    for k, xy in enumerate(REF_NODES):
        value = evaluate(u, space, np.arange(8), xy)[0]
        np.testing.assert_allclose(value, u[space.dof_map[:, k]], atol=1e-14)


def test_interpolation_error_order():
    case = get_case("smooth")
    errs = []
    for n in (8, 16, 32):
        space = build_space(build_square_mesh(n))
        u = interpolate(case.exact_u, space)
        phi, _, jxw, xq = space.tabulation
        e = case.exact_u(xq[..., 0], xq[..., 1]) - space.local(u) @ phi.T
        errs.append(np.sqrt(np.sum(jxw * e**2)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 6.5) & (ratios < 9.5))


@pytest.mark.parametrize("via_parent", [True, False])
def test_transfer_is_exact_for_quadratics(via_parent):
    coarse = build_space(build_lshape_mesh(1))
    fine_mesh = refine(coarse.mesh, [0, 4, 10])
    if not via_parent:
        fine_mesh = type(fine_mesh)(fine_mesh.vertices, fine_mesh.cells)
    fine = build_space(fine_mesh)
    field = lambda x, y: 1 + x - 2 * y + x * y - y**2
    got = transfer(interpolate(field, coarse), coarse, fine)
    np.testing.assert_allclose(got, interpolate(field, fine), atol=1e-13)
