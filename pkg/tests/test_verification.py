import math
import types

import numpy as np
import pytest

from mfmfe_stokes.mesh import DIRICHLET, NEUMANN, structured_square
from mfmfe_stokes.spaces import FluxSpace, HdivField, P1Field, interpolate_flux
import mfmfe_stokes.verification as verif
from mfmfe_stokes.verification import (ConvergenceTable, ErrorHistory,
                                       cavity_velocity, convergence_rate,
                                       exact_test1, l2_error, make_test1_mesh,
                                       run_cavity, run_decay, run_test1,
                                       sample_field, scenario1_marker,
                                       scenario1_normal, square_side_normal,
                                       vortex_velocity)

_H = 1e-30


def _cstep(f, x, y, t, dx=0.0, dy=0.0, dt=0.0):
    """Complex-step directional derivative; exact to machine precision."""
    return np.imag(f(x + 1j * _H * dx, y + 1j * _H * dy, t + 1j * _H * dt)) / _H


# -- exact fields ------------------------------------------------------------

def test_exact_solution_spot_values():
    ux, uy, psi = exact_test1(0.0, 0.0, 0.25)
    assert abs(ux) == 0.0
    assert abs(uy) == 0.0
    assert abs(psi - 0.5) <= 1e-15
    # Starts from rest, and the ramp vanishes again at t = 1/2.
    for t in (0.0, 0.5):
        ux, uy, psi = exact_test1(0.3, -0.1, t)
        assert abs(ux) <= 1e-30 and abs(uy) <= 1e-30 and abs(psi) <= 1e-30


def test_exact_velocity_divergence_free():
    rng = np.random.default_rng(3)
    x = rng.uniform(-0.5, 0.5, 100)
    y = rng.uniform(-0.5, 0.5, 100)
    div = (_cstep(lambda a, b, t: verif.test1_velocity(a, b, t)[..., 0], x, y, 0.37, dx=1.0)
           + _cstep(lambda a, b, t: verif.test1_velocity(a, b, t)[..., 1], x, y, 0.37, dy=1.0))
    assert np.abs(div).max() <= 1e-14


def test_velocity_gradient_matches_derivatives():
    rng = np.random.default_rng(4)
    x = rng.uniform(-0.5, 0.5, 20)
    y = rng.uniform(-0.5, 0.5, 20)
    t = 0.41
    g = verif.test1_velocity_gradient(x, y, t)
    for i in range(2):
        gx = _cstep(lambda a, b, tt: verif.test1_velocity(a, b, tt)[..., i], x, y, t, dx=1.0)
        gy = _cstep(lambda a, b, tt: verif.test1_velocity(a, b, tt)[..., i], x, y, t, dy=1.0)
        assert np.abs(g[:, i, 0] - gx).max() <= 1e-13
        assert np.abs(g[:, i, 1] - gy).max() <= 1e-13


def test_pressure_gradient_matches_derivatives():
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.5, 0.5, 20)
    y = rng.uniform(-0.5, 0.5, 20)
    t = 0.13
    q = verif.test1_pressure_gradient(x, y, t)
    qx = _cstep(verif.test1_pressure, x, y, t, dx=1.0)
    qy = _cstep(verif.test1_pressure, x, y, t, dy=1.0)
    assert np.abs(q[:, 0] - qx).max() <= 1e-13
    assert np.abs(q[:, 1] - qy).max() <= 1e-13


def test_forcing_closes_momentum_equation():
    # f must equal du/dt - nu Lap(u) + grad(psi); the derivatives are taken
    # by complex step, the Laplacian by complex-stepping the gradient (which
    # the previous test ties back to the velocity itself).
    nu = 0.7
    rng = np.random.default_rng(6)
    x = rng.uniform(-0.5, 0.5, 30)
    y = rng.uniform(-0.5, 0.5, 30)
    t = 0.29
    f = verif.test1_forcing(nu)(x, y, t)
    q = verif.test1_pressure_gradient(x, y, t)
    for i in range(2):
        ut = _cstep(lambda a, b, tt: verif.test1_velocity(a, b, tt)[..., i], x, y, t, dt=1.0)
        lap = (_cstep(lambda a, b, tt: verif.test1_velocity_gradient(a, b, tt)[..., i, 0],
                      x, y, t, dx=1.0)
               + _cstep(lambda a, b, tt: verif.test1_velocity_gradient(a, b, tt)[..., i, 1],
                        x, y, t, dy=1.0))
        resid = f[:, i] - (ut - nu * lap + q[:, i])
        assert np.abs(resid).max() <= 1e-12


def test_stress_on_bottom_side():
    # Independent hand evaluation of (-nu grad u + psi I) n at a bottom-side
    # point where n = (0, -1).
    nu, t = 2.0, 0.37
    x, y = 0.25, -0.5
    s = math.sin(2.0 * math.pi * t) ** 2
    sig = verif.test1_stress(nu, scenario1_normal)(np.array([x]), np.array([y]), t)
    # grad(u_x).n = -d(u_x)/dy = cos x cos y s, so Sigma_x = -nu cos x cos y s;
    # grad(u_y).n = -d(u_y)/dy = sin x sin y s, and psi n_y = -psi.
    expect_x = -nu * math.cos(x) * math.cos(y) * s
    expect_y = (-nu * math.sin(x) * math.sin(y) * s
                - 0.25 * (math.cos(2 * x) + math.cos(2 * y)) * s)
    assert abs(sig[0, 0] - expect_x) <= 1e-14
    assert abs(sig[0, 1] - expect_y) <= 1e-14


# -- boundary segmentation ---------------------------------------------------

def test_scenario1_marker_alternates():
    cases = [((-0.25, -0.5), "dirichlet"), ((0.25, -0.5), "neumann"),
             ((0.5, -0.25), "dirichlet"), ((0.5, 0.25), "neumann"),
             ((0.25, 0.5), "dirichlet"), ((-0.25, 0.5), "neumann"),
             ((-0.5, 0.25), "dirichlet"), ((-0.5, -0.25), "neumann")]
    for (x, y), want in cases:
        assert scenario1_marker(x, y) == want


def test_scenario1_mesh_split_counts():
    mesh = make_test1_mesh(0, scenario=1, base_n=8)
    nd = len(mesh.boundary_edges(DIRICHLET))
    nn = len(mesh.boundary_edges(NEUMANN))
    assert nd == nn == 16


def test_scenario1_normal_matches_mesh_normals():
    mesh = make_test1_mesh(0, scenario=1, base_n=4)
    eids = mesh.boundary_edges(NEUMANN)
    mids = 0.5 * (mesh.vertices[mesh.edges[eids, 0]]
                  + mesh.vertices[mesh.edges[eids, 1]])
    n = scenario1_normal(mids[:, 0], mids[:, 1])
    assert np.abs(n - mesh.edge_normals[eids]).max() <= 1e-14


def test_scenario1_normal_at_corners():
    corners = [((0.5, -0.5), (0.0, -1.0)), ((0.5, 0.5), (1.0, 0.0)),
               ((-0.5, 0.5), (0.0, 1.0)), ((-0.5, -0.5), (-1.0, 0.0))]
    for (x, y), want in corners:
        got = scenario1_normal(np.array([x]), np.array([y]))[0]
        assert tuple(got) == want


def test_nearest_side_normal():
    normal = square_side_normal()
    assert tuple(normal(np.array([0.1]), np.array([-0.5]))[0]) == (0.0, -1.0)
    assert tuple(normal(np.array([-0.5]), np.array([0.3]))[0]) == (-1.0, 0.0)
    # Corner tie resolves to the bottom side first.
    assert tuple(normal(np.array([-0.5]), np.array([-0.5]))[0]) == (0.0, -1.0)


@pytest.mark.parametrize("level", [0, 1])
def test_scenario2_single_natural_edge(level):
    mesh = make_test1_mesh(level, scenario=2, base_n=4)
    nn = mesh.boundary_edges(NEUMANN)
    assert len(nn) == 1
    a, b = mesh.edges[nn[0]]
    pts = mesh.vertices[[a, b]]
    assert np.abs(pts[:, 1] + 0.5).max() <= 1e-12      # on the bottom side
    assert pts[:, 0].min() <= -0.5 + 1e-12             # next to the corner


def test_perturbed_family_keeps_markers_and_is_deterministic():
    m1 = make_test1_mesh(0, scenario=1, grid="perturbed", base_n=4, seed=9)
    m2 = make_test1_mesh(0, scenario=1, grid="perturbed", base_n=4, seed=9)
    m0 = make_test1_mesh(0, scenario=1, grid="structured", base_n=4)
    assert np.array_equal(m1.vertices, m2.vertices)
    assert np.array_equal(m1.edge_markers, m0.edge_markers)
    assert np.abs(m1.vertices - m0.vertices).max() > 0.0


# -- error norms -------------------------------------------------------------

def _state(u, psi):
    return types.SimpleNamespace(u=u, psi=psi)


def test_l2_error_vanishes_for_injected_linear_fields():
    mesh = structured_square(3, (-0.5, -0.5), (0.5, 0.5), "dirichlet")
    space = FluxSpace(mesh)
    u = interpolate_flux(space, lambda x, y: np.stack([np.asarray(y), np.asarray(x)], axis=-1))
    psi = P1Field(mesh, 1.0 + 2.0 * mesh.vertices[mesh.triangles, 0]
                  - mesh.vertices[mesh.triangles, 1])
    errs = l2_error(_state(u, psi),
                    lambda x, y, t: np.stack([np.asarray(y), np.asarray(x)], axis=-1),
                    lambda x, y, t: 1.0 + 2.0 * np.asarray(x) - np.asarray(y),
                    t=0.123)
    for v in ("psi", "ux", "uy"):
        assert errs[v] <= 1e-13


def test_l2_error_of_zero_state_matches_closed_form_norms():
    # Against a zero discrete state the error is the L2 norm of the exact
    # fields; closed forms on the centered unit square:
    #   |u_x| = |u_y| = s cos(1)/2,
    #   |psi|^2 = s^2 (1 + sin(2)/2 + 2 sin(1)^2)/16.
    t = 0.3
    s = math.sin(2.0 * math.pi * t) ** 2
    mesh = structured_square(64, (-0.5, -0.5), (0.5, 0.5), "dirichlet")
    space = FluxSpace(mesh)
    errs = l2_error(_state(HdivField(space), P1Field(mesh)),
                    verif.test1_velocity, verif.test1_pressure, t)
    want_u = s * math.cos(1.0) / 2.0
    want_p = s * math.sqrt(1.0 + math.sin(2.0) / 2.0 + 2.0 * math.sin(1.0) ** 2) / 4.0
    assert abs(errs["ux"] - want_u) <= 1e-10 * want_u
    assert abs(errs["uy"] - want_u) <= 1e-10 * want_u
    assert abs(errs["psi"] - want_p) <= 1e-10 * want_p


def test_l2_error_homogeneity():
    mesh = structured_square(4, (-0.5, -0.5), (0.5, 0.5), "dirichlet")
    space = FluxSpace(mesh)
    state = _state(HdivField(space), P1Field(mesh))
    base = l2_error(state, verif.test1_velocity, verif.test1_pressure, 0.3)
    tripled = l2_error(state,
                       lambda x, y, t: 3.0 * verif.test1_velocity(x, y, t),
                       lambda x, y, t: 3.0 * verif.test1_pressure(x, y, t), 0.3)
    for v in ("psi", "ux", "uy"):
        assert abs(tripled[v] - 3.0 * base[v]) <= 1e-12 * base[v]


def test_error_history_running_maxima():
    h = ErrorHistory()
    h.append(0.1, {"psi": 1.0, "ux": 0.5, "uy": 2.0})
    h.append(0.2, {"psi": 0.5, "ux": 0.7, "uy": 1.0})
    assert len(h) == 2
    assert h.maxima == {"psi": 1.0, "ux": 0.7, "uy": 2.0}
    run = h.running_maxima()
    assert run[0] == {"psi": 1.0, "ux": 0.5, "uy": 2.0}
    assert run[1] == {"psi": 1.0, "ux": 0.7, "uy": 2.0}


def test_convergence_rate_arithmetic():
    assert convergence_rate([4.0, 1.0], [2.0, 1.0]) == [2.0]
    rates = convergence_rate([9.0, 1.0], [3.0, 1.0])
    assert abs(rates[0] - 2.0) <= 1e-14
    # Halving h with errors from a second-order method.
    r = convergence_rate([1.142e-2, 2.865e-3], [1.0, 0.5])
    assert abs(r[0] - math.log2(1.142e-2 / 2.865e-3)) <= 1e-12


def test_convergence_rate_rejects_zero_error():
    with pytest.raises(ValueError):
        convergence_rate([1.0, 0.0], [2.0, 1.0])


def test_convergence_table_rows_layout():
    table = ConvergenceTable(
        mode="space", labels=[0, 1], sizes=[0.2, 0.1],
        errors={"psi": [1.0, 0.25], "ux": [2.0, 0.5], "uy": [4.0, 1.0]},
        rates={"psi": [2.0], "ux": [2.0], "uy": [2.0]})
    rows = table.rows()
    assert rows[0] == list(ConvergenceTable.HEADER)
    assert rows[1][4:] == ["", "", ""]
    assert rows[2][4:] == ["2.000", "2.000", "2.000"]


# -- study drivers -----------------------------------------------------------

def test_run_test1_space_smoke(tmp_path):
    csv_path = tmp_path / "conv.csv"
    table = run_test1(mode="space", scenario=1, levels=2, base_n=4,
                      dt=0.02, t_final=0.04, csv_path=str(csv_path))
    assert table.labels == [0, 1]
    assert len(table.rates["psi"]) == 1
    for v in ("psi", "ux", "uy"):
        assert table.errors[v][0] > 0.0
    assert max(table.meta["max_divergence_ratio"]) <= 1e-10
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0].startswith("level,")
    assert len(lines) == 3


def test_run_test1_single_level_has_no_rates():
    table = run_test1(mode="space", scenario=2, levels=1, base_n=4,
                      dt=0.02, t_final=0.04)
    assert table.rates == {"psi": [], "ux": [], "uy": []}


def test_run_test1_time_smoke():
    table = run_test1(mode="time", scenario=1, base_n=4, time_level=0,
                      dt_schedule=(0.05, 0.025), t_final=0.1)
    assert table.labels == [0.05, 0.025]
    assert table.sizes == [0.05, 0.025]
    assert len(table.rates["ux"]) == 1


# -- sampling and cavity -----------------------------------------------------

def test_sample_field_reproduces_linears():
    mesh = structured_square(2, pattern="crisscross")
    vals = 2.0 * mesh.vertices[mesh.triangles, 0] + mesh.vertices[mesh.triangles, 1]
    pts = np.array([[0.5, 0.5], [0.25, 0.25], [0.1, 0.9], [0.0, 0.0], [1.0, 0.3]])
    got = sample_field(mesh, vals, pts)
    want = 2.0 * pts[:, 0] + pts[:, 1]
    assert np.abs(got - want).max() <= 1e-13


def test_sample_field_vector_values():
    mesh = structured_square(2)
    vals = np.stack([mesh.vertices[mesh.triangles, 0],
                     mesh.vertices[mesh.triangles, 1]], axis=2)
    got = sample_field(mesh, vals, [[0.3, 0.7]])
    assert np.abs(got - [[0.3, 0.7]]).max() <= 1e-14


def test_sample_field_rejects_outside_points():
    mesh = structured_square(2)
    with pytest.raises(ValueError):
        sample_field(mesh, mesh.vertices[mesh.triangles, 0], [[2.0, 2.0]])


def test_cavity_velocity_walls():
    ub = cavity_velocity(-1.0, lid=1.0)
    pts = np.array([[0.3, 1.0], [0.3, 0.0], [0.0, 0.5], [1.0, 0.5]])
    vals = ub(pts[:, 0], pts[:, 1], 0.0)
    assert np.allclose(vals, [[1.0, 0.0], [-1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])


def test_run_cavity_smoke_corner_pin():
    res = run_cavity(s=0.0, n=4, dt=0.1, t_final=3.0, steady_tol=1e-8)
    assert res.steps > 0
    assert abs(res.net_boundary_flux) <= 1e-10
    v = res.profiles["vertical"]
    assert v["coord"][0] == 0.0 and v["coord"][-1] == 1.0
    assert v["ux"][-1] == 1.0 and v["uy"][-1] == 0.0   # lid value reported
    assert v["ux"][0] == 0.0                           # resting bottom wall
    h = res.profiles["horizontal"]
    assert h["ux"][0] == 0.0 and h["ux"][-1] == 0.0    # no-slip side walls
    # Interior flow actually moves.
    assert np.abs(v["ux"][1:-1]).max() > 1e-3
    assert res.solver.ledger is not None


def test_run_cavity_deflated_mode_normalizes_pressure(tmp_path):
    res = run_cavity(s=1.0, n=4, dt=0.1, t_final=2.0, pin="none",
                     csv_path=str(tmp_path / "prof.csv"))
    # Reported pressure is shifted to vanish at the lower-left corner.
    p = sample_field(res.mesh, res.state.psi.values - res.psi_corner, [[0.0, 0.0]])
    assert abs(p[0]) <= 1e-12
    lines = (tmp_path / "prof.csv").read_text().strip().splitlines()
    assert lines[0] == "line,coord,ux,uy,psi"
    assert len(lines) == 1 + 2 * 41


def test_run_decay_ledger():
    solver, state = run_decay(n=8, dt=0.05, n_steps=5)
    assert solver.ledger.satisfied
    assert len(solver.ledger.rows) == 5
    assert np.abs(state.u.dofs).max() > 0.0


def test_vortex_velocity_vanishes_on_walls():
    u0 = vortex_velocity(2.0)
    pts = np.array([[0.0, 0.3], [1.0, 0.7], [0.4, 0.0], [0.6, 1.0]])
    vals = u0(pts[:, 0], pts[:, 1])
    assert np.abs(vals).max() <= 1e-13
