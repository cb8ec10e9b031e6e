import numpy as np
import pytest
import sympy as sp

from mfmfe_stokes.mesh import build_mesh
from mfmfe_stokes.quadrature import (
    DEGREE5, MIDPOINT3, NODAL4, edge_integrate, edge_rule, physical_points,
    quad_q, tri_integrate,
)


def reference_triangle_mesh():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return build_mesh(verts, np.array([[0, 1, 2]]), "dirichlet")


def random_triangle_mesh(seed):
    rng = np.random.default_rng(seed)
    while True:
        verts = rng.uniform(-2.0, 2.0, size=(3, 2))
        d1, d2 = verts[1] - verts[0], verts[2] - verts[0]
        area2 = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(area2) > 0.5:
            return build_mesh(verts, np.array([[0, 1, 2]]), "dirichlet")


def symbolic_triangle_integral(mesh, a, b):
    """Oracle: integrate x^a y^b over the (single) element symbolically."""
    u, v = sp.symbols("u v")
    p0 = mesh.vertices[mesh.triangles[0, 0]]
    J = mesh.jac[0]
    x = p0[0] + J[0, 0] * u + J[0, 1] * v
    y = p0[1] + J[1, 0] * u + J[1, 1] * v
    integrand = sp.expand(x ** a * y ** b) * abs(sp.Float(mesh.jac_det[0], 20))
    inner = sp.integrate(integrand, (v, 0, 1 - u))
    return float(sp.integrate(inner, (u, 0, 1)))


def test_nodal4_weights():
    assert np.allclose(NODAL4.weights, [1 / 12, 1 / 12, 1 / 12, 3 / 4])
    assert np.allclose(NODAL4.points[3], [1 / 3, 1 / 3])
    assert NODAL4.weights.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("rule,deg", [(NODAL4, 2), (MIDPOINT3, 2), (DEGREE5, 5)])
@pytest.mark.parametrize("seed", [0, 1])
def test_rules_exact_against_symbolic_oracle(rule, deg, seed):
    mesh = reference_triangle_mesh() if seed == 0 else random_triangle_mesh(seed)
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            exact = symbolic_triangle_integral(mesh, a, b)
            got = tri_integrate(mesh, 0, lambda x, y: x ** a * y ** b, rule)
            assert got == pytest.approx(exact, abs=1e-13 * max(1.0, abs(exact)))


def test_nodal4_exact_total_degree_two_reference():
    # Frozen closed-form values on the reference triangle: integral of
    # x^a y^b equals a! b! / (a+b+2)!.
    mesh = reference_triangle_mesh()
    expected = {(0, 0): 1 / 2, (1, 0): 1 / 6, (0, 1): 1 / 6,
                (2, 0): 1 / 12, (1, 1): 1 / 24, (0, 2): 1 / 12}
    for (a, b), exact in expected.items():
        got = tri_integrate(mesh, 0, lambda x, y: x ** a * y ** b, NODAL4)
        assert got == pytest.approx(exact, abs=1e-14)


def test_quad_q_matches_tri_integrate_for_quadratics():
    mesh = random_triangle_mesh(5)

    def f(x, y):
        return np.stack([1.0 + x, 2.0 - y], axis=-1)

    def g(x, y):
        return np.stack([y, x], axis=-1)

    got = quad_q(mesh, 0, f, g)
    exact = tri_integrate(mesh, 0, lambda x, y: (1 + x) * y + (2 - y) * x, MIDPOINT3)
    assert got == pytest.approx(exact, rel=1e-13)


def test_quad_q_localizes_to_nodes():
    # The nodal rule only sees vertex and centroid values: a function that
    # vanishes at all four nodes integrates to exactly zero.
    mesh = reference_triangle_mesh()

    def nodeless(x, y):
        lam = x * y * (1.0 - x - y) * (x - 1.0 / 3.0)
        return np.stack([lam, lam], axis=-1)

    assert quad_q(mesh, 0, nodeless, nodeless) == 0.0


def test_mapped_vs_reference_integral():
    # Affine change of variables: integral over E of f equals
    # |J| * integral over the reference triangle of f(F(xhat)).
    mesh = random_triangle_mesh(11)
    ref = reference_triangle_mesh()
    p0 = mesh.vertices[mesh.triangles[0, 0]]
    J = mesh.jac[0]

    def f(x, y):
        return np.sin(x) * np.cos(y) + x * y

    def f_ref(u, v):
        x = p0[0] + J[0, 0] * u + J[0, 1] * v
        y = p0[1] + J[1, 0] * u + J[1, 1] * v
        return f(x, y)

    lhs = tri_integrate(mesh, 0, f, DEGREE5)
    rhs = mesh.jac_det[0] * tri_integrate(ref, 0, f_ref, DEGREE5)
    assert lhs == pytest.approx(rhs, rel=1e-13)


def test_edge_rule_exactness():
    s, w = edge_rule(3)
    # 3-point Gauss is exact through degree 5 on [0, 1].
    for k in range(6):
        assert np.dot(w, s ** k) == pytest.approx(1.0 / (k + 1), abs=1e-15)


def test_edge_integrate_on_slanted_edge():
    verts = np.array([[0.0, 0.0], [2.0, 1.0], [0.0, 2.0]])
    mesh = build_mesh(verts, np.array([[0, 1, 2]]), "dirichlet")
    # Edge (0, 1): length sqrt(5); integrate f = x along it.
    e = [i for i in range(mesh.n_edges)
         if tuple(mesh.edges[i]) == (0, 1)][0]
    got = edge_integrate(mesh, e, lambda x, y: x)
    assert got == pytest.approx(np.sqrt(5.0) * 1.0)  # mean x = 1 over length


def test_physical_points_shape():
    mesh = build_mesh(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
                      np.array([[0, 1, 2], [0, 2, 3]]), "dirichlet")
    pts = physical_points(mesh, DEGREE5)
    assert pts.shape == (2, 7, 2)
    # Centroid point of the rule lands on the element centroid.
    assert np.allclose(pts[:, 0, :], mesh.centroids)
