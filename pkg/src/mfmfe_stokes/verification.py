"""Manufactured-solution convergence studies and benchmark drivers.

The module bundles three things:

* an exact time-dependent Stokes solution on the square [-1/2, 1/2]^2
  (``exact_test1`` and friends) together with the boundary segmentations
  used by the convergence studies,
* error measurement utilities (``l2_error``, ``ErrorHistory``,
  ``convergence_rate``, ``ConvergenceTable``) where the reported error per
  variable is the maximum over time steps of the spatial L2 error,
* drivers: ``run_test1`` (spatial or temporal refinement study),
  ``run_cavity`` (lid-driven cavity with a movable bottom wall) and
  ``run_decay`` (unforced decay of a vortex, used for energy-ledger checks).
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import build_mesh, perturb_mesh, structured_square
from .quadrature import DEGREE5, physical_points
from .solver import ProjectionSolver, StokesProblem

TEST1_LO = (-0.5, -0.5)
TEST1_HI = (0.5, 0.5)

_TWO_PI = 2.0 * math.pi


# -- exact fields ------------------------------------------------------------

def _ramp(t):
    return np.sin(_TWO_PI * t) ** 2


def _ramp_dt(t):
    return _TWO_PI * np.sin(2.0 * _TWO_PI * t)


def exact_test1(x, y, t):
    """Exact (u_x, u_y, psi) of the manufactured problem at time t.

    u = s(t) (-cos x sin y, sin x cos y), psi = s(t) (cos 2x + cos 2y)/4
    with s(t) = sin(2 pi t)^2; u is pointwise divergence free and starts
    from rest.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    s = _ramp(t)
    ux = -np.cos(x) * np.sin(y) * s
    uy = np.sin(x) * np.cos(y) * s
    psi = 0.25 * (np.cos(2.0 * x) + np.cos(2.0 * y)) * s
    return ux, uy, psi


def test1_velocity(x, y, t):
    ux, uy, _ = exact_test1(x, y, t)
    return np.stack([ux, uy], axis=-1)


def test1_pressure(x, y, t):
    return exact_test1(x, y, t)[2]


def test1_pressure_gradient(x, y, t):
    x = np.asarray(x)
    y = np.asarray(y)
    s = _ramp(t)
    return np.stack([-0.5 * np.sin(2.0 * x) * s,
                     -0.5 * np.sin(2.0 * y) * s], axis=-1)


def test1_velocity_gradient(x, y, t):
    """[..., i, j] = d u_i / d x_j of the exact velocity."""
    x = np.asarray(x)
    y = np.asarray(y)
    s = _ramp(t)
    row0 = np.stack([np.sin(x) * np.sin(y) * s,
                     -np.cos(x) * np.cos(y) * s], axis=-1)
    row1 = np.stack([np.cos(x) * np.cos(y) * s,
                     -np.sin(x) * np.sin(y) * s], axis=-1)
    return np.stack([row0, row1], axis=-2)


def test1_forcing(nu):
    """Body force making the exact fields solve the momentum equation."""

    def forcing(x, y, t):
        x = np.asarray(x)
        y = np.asarray(y)
        s, sd = _ramp(t), _ramp_dt(t)
        fx = (-np.cos(x) * np.sin(y) * (sd + 2.0 * nu * s)
              - 0.5 * np.sin(2.0 * x) * s)
        fy = (np.sin(x) * np.cos(y) * (sd + 2.0 * nu * s)
              - 0.5 * np.sin(2.0 * y) * s)
        return np.stack([fx, fy], axis=-1)

    return forcing


def test1_stress(nu, normal_fn):
    """Pseudo-traction (-nu grad u + psi I) n with n resolved from position."""

    def stress(x, y, t):
        x = np.asarray(x)
        y = np.asarray(y)
        n = normal_fn(x, y)
        g = test1_velocity_gradient(x, y, t)
        psi = test1_pressure(x, y, t)
        tn = -nu * np.einsum("...ij,...j->...i", g, n)
        return tn + psi[..., None] * n

    return stress


# -- boundary segmentation ---------------------------------------------------
#
# Scenario 1 splits every side of the square at its midpoint and alternates
# essential/natural segments around the perimeter: walking counterclockwise
# from the lower-left corner the pattern is D N D N D N D N, so each corner
# touches exactly one natural segment (which fixes the normal there).
# Scenario 2 uses essential data everywhere except a single boundary edge
# next to the lower-left corner on the bottom side.

_SIDE_TOL = 1e-9


def _on(v, target):
    return np.abs(np.asarray(v, dtype=float) - target) < _SIDE_TOL


def scenario1_marker(x, y):
    """Edge-midpoint marker for the alternating boundary split."""
    if _on(y, TEST1_LO[1]):
        return "neumann" if x >= 0.0 else "dirichlet"
    if _on(x, TEST1_HI[0]):
        return "neumann" if y >= 0.0 else "dirichlet"
    if _on(y, TEST1_HI[1]):
        return "neumann" if x <= 0.0 else "dirichlet"
    if _on(x, TEST1_LO[0]):
        return "neumann" if y <= 0.0 else "dirichlet"
    raise ValueError(f"point ({x}, {y}) is not on the boundary")


def scenario1_normal(x, y):
    """Outward normal on the natural part of the scenario-1 boundary.

    At the four corners two sides meet but only one carries natural data,
    so the normal of that side is returned.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = np.zeros(x.shape + (2,))
    done = np.zeros(x.shape, dtype=bool)
    sides = [
        (_on(y, TEST1_LO[1]) & (x >= 0.0), (0.0, -1.0)),
        (_on(x, TEST1_HI[0]) & (y >= 0.0), (1.0, 0.0)),
        (_on(y, TEST1_HI[1]) & (x <= 0.0), (0.0, 1.0)),
        (_on(x, TEST1_LO[0]) & (y <= 0.0), (-1.0, 0.0)),
    ]
    for mask, vec in sides:
        pick = mask & ~done
        n[pick] = vec
        done |= pick
    if not done.all():
        raise ValueError("point off the natural boundary segments")
    return n


def square_side_normal(lo=TEST1_LO, hi=TEST1_HI):
    """Nearest-side outward normal on a rectangle boundary.

    Corner ties are broken in the order bottom, right, top, left.
    """

    def normal(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = np.stack([np.abs(y - lo[1]), np.abs(x - hi[0]),
                      np.abs(y - hi[1]), np.abs(x - lo[0])], axis=-1)
        side = np.argmin(d, axis=-1)
        vecs = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        return vecs[side]

    return normal


def single_neumann_edge(mesh):
    """Rebuild a mesh flipping one bottom edge near the lower-left corner to
    the natural marker; every other boundary edge keeps its marker."""
    spec = mesh.boundary_marker_map()
    lo_y = mesh.vertices[:, 1].min()
    best, best_x = None, np.inf
    for e in mesh.boundary_edges():
        a, b = mesh.edges[e]
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        if _on(pa[1], lo_y) and _on(pb[1], lo_y):
            mx = 0.5 * (pa[0] + pb[0])
            if mx < best_x:
                best, best_x = (int(a), int(b)), mx
    if best is None:
        raise ValueError("mesh has no bottom-side boundary edge")
    spec[best] = "neumann"
    return build_mesh(mesh.vertices, mesh.triangles, spec)


def make_test1_mesh(level, scenario=1, grid="structured", base_n=8, seed=1234):
    """Level-``level`` mesh of the study domain with scenario markers.

    grid: "structured" (diagonal split), "crisscross", or "perturbed"
    (structured mesh with interior vertices randomly displaced; deterministic
    per level).
    """
    n = base_n * 2 ** level
    marker = scenario1_marker if scenario == 1 else "dirichlet"
    pattern = "crisscross" if grid == "crisscross" else "right"
    mesh = structured_square(n, TEST1_LO, TEST1_HI, marker, pattern=pattern)
    if scenario == 2:
        mesh = single_neumann_edge(mesh)
    elif scenario != 1:
        raise ValueError(f"unknown scenario {scenario!r}")
    if grid == "perturbed":
        mesh = perturb_mesh(mesh, 0.25, seed + level)
    elif grid not in ("structured", "crisscross"):
        raise ValueError(f"unknown grid family {grid!r}")
    return mesh


def test1_problem(nu=1.0, scenario=1):
    if scenario == 1:
        normal_fn = scenario1_normal
    else:
        normal_fn = square_side_normal()
    return StokesProblem(
        nu=nu,
        dirichlet_velocity=test1_velocity,
        neumann_stress=test1_stress(nu, normal_fn),
        forcing=test1_forcing(nu),
    )


# -- error measurement -------------------------------------------------------

def l2_error(state, velocity, pressure, t):
    """Spatial L2 errors of a solver state against exact field callables.

    Returns {"psi": ..., "ux": ..., "uy": ...}; integration uses a
    degree-5 rule so the quadrature error is negligible next to the
    discretization error being measured.
    """
    mesh = state.u.space.mesh
    pts = physical_points(mesh, DEGREE5)
    flat = pts.reshape(-1, 2)
    w = DEGREE5.weights

    uh = state.u.eval_ref(DEGREE5.points)
    ue = np.asarray(velocity(flat[:, 0], flat[:, 1], t)).reshape(uh.shape)
    du = uh - ue
    ex = math.sqrt(float(np.sum(mesh.areas * (du[:, :, 0] ** 2 @ w))))
    ey = math.sqrt(float(np.sum(mesh.areas * (du[:, :, 1] ** 2 @ w))))

    ph = state.psi.eval_ref(DEGREE5.points)
    pe = np.asarray(pressure(flat[:, 0], flat[:, 1], t)).reshape(ph.shape)
    ep = math.sqrt(float(np.sum(mesh.areas * ((ph - pe) ** 2 @ w))))
    return {"psi": ep, "ux": ex, "uy": ey}


VARIABLES = ("psi", "ux", "uy")


class ErrorHistory:
    """Per-step L2 errors of a transient run plus their running maxima.

    The summary error per variable is the maximum over all recorded steps,
    matching an L-infinity-in-time, L2-in-space norm.
    """

    def __init__(self):
        self.times = []
        self.rows = []

    def append(self, t, errs):
        self.times.append(float(t))
        self.rows.append({v: float(errs[v]) for v in VARIABLES})

    def __len__(self):
        return len(self.rows)

    @property
    def maxima(self):
        if not self.rows:
            return {v: 0.0 for v in VARIABLES}
        return {v: max(r[v] for r in self.rows) for v in VARIABLES}

    def running_maxima(self):
        out, cur = [], {v: 0.0 for v in VARIABLES}
        for r in self.rows:
            cur = {v: max(cur[v], r[v]) for v in VARIABLES}
            out.append(dict(cur))
        return out


def convergence_rate(errors, sizes):
    """Observed rates log(e_l / e_{l+1}) / log(h_l / h_{l+1}).

    ``errors`` and ``sizes`` are parallel sequences (mesh size h or step
    size dt).  A zero or negative error leaves the rate undefined and
    raises ValueError rather than reporting a misleading number.
    """
    e = np.asarray(errors, dtype=float)
    h = np.asarray(sizes, dtype=float)
    if e.shape != h.shape or e.ndim != 1:
        raise ValueError("errors and sizes must be 1-d and the same length")
    if np.any(e <= 0.0):
        raise ValueError("convergence rate undefined: zero error entry")
    if np.any(h <= 0.0):
        raise ValueError("sizes must be positive")
    return [float(r) for r in np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])]


@dataclass
class ConvergenceTable:
    """Errors and observed rates across refinement levels.

    ``labels`` names the rows (level index or step size), ``sizes`` holds the
    refinement parameter used for rate computation.  There is one fewer rate
    row than error rows; CSV output leaves the first rate cells empty.
    """

    mode: str
    labels: list
    sizes: list
    errors: dict
    rates: dict
    meta: dict = field(default_factory=dict)

    HEADER = ("level", "L2_psi", "L2_ux", "L2_uy",
              "rate_psi", "rate_ux", "rate_uy")

    def rows(self):
        out = [list(self.HEADER)]
        for i, label in enumerate(self.labels):
            row = [label] + [f"{self.errors[v][i]:.6e}" for v in VARIABLES]
            if i == 0:
                row += ["", "", ""]
            else:
                row += [f"{self.rates[v][i - 1]:.3f}" for v in VARIABLES]
            out.append(row)
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.rows())

    def __str__(self):
        rows = self.rows()
        widths = [max(len(str(r[c])) for r in rows) for c in range(len(rows[0]))]
        return "\n".join(
            "  ".join(str(cell).rjust(w) for cell, w in zip(r, widths))
            for r in rows)


def _transient_errors(mesh, problem, dt, t_final, predictor_tol, projection_tol):
    solver = ProjectionSolver(mesh, problem, dt,
                              predictor_tol=predictor_tol,
                              projection_tol=projection_tol)
    state = solver.initialize()
    history = ErrorHistory()
    n_steps = int(round(t_final / dt))
    for _ in range(n_steps):
        solver.advance(state)
        history.append(state.t,
                       l2_error(state, test1_velocity, test1_pressure, state.t))
    return history, solver


def run_test1(mode="space", scenario=1, levels=3, base_n=8, dt=1e-3,
              t_final=0.5, nu=1.0, grid="structured",
              dt_schedule=(1e-1, 1e-2, 1e-3), time_level=3, seed=1234,
              predictor_tol=1e-10, projection_tol=1e-13, csv_path=None,
              progress=None):
    """Convergence study against the manufactured solution.

    mode="space": run ``levels`` consecutive refinements (coarsest
    ``base_n`` x ``base_n``) at fixed dt and rate against the mesh size.
    mode="time": run every dt in ``dt_schedule`` on the fixed
    ``time_level`` mesh and rate against dt.  A single refinement row
    yields an empty rate list.  Returns a ConvergenceTable; ``meta``
    records the worst scaled divergence of every run.
    """
    if scenario not in (1, 2):
        raise ValueError(f"unknown scenario {scenario!r}")
    problem = test1_problem(nu=nu, scenario=scenario)
    labels, sizes, ratios, histories = [], [], [], []
    errors = {v: [] for v in VARIABLES}

    if mode == "space":
        for level in range(levels):
            mesh = make_test1_mesh(level, scenario, grid, base_n, seed)
            history, solver = _transient_errors(
                mesh, problem, dt, t_final, predictor_tol, projection_tol)
            labels.append(level)
            sizes.append(mesh.h)
            ratios.append(solver.max_divergence_ratio)
            histories.append(history)
            for v in VARIABLES:
                errors[v].append(history.maxima[v])
            if progress is not None:
                progress(f"level {level}: h={mesh.h:.4f} "
                         + " ".join(f"{v}={errors[v][-1]:.3e}" for v in VARIABLES))
    elif mode == "time":
        mesh = make_test1_mesh(time_level, scenario, grid, base_n, seed)
        for dt_k in dt_schedule:
            history, solver = _transient_errors(
                mesh, problem, dt_k, t_final, predictor_tol, projection_tol)
            labels.append(dt_k)
            sizes.append(dt_k)
            ratios.append(solver.max_divergence_ratio)
            histories.append(history)
            for v in VARIABLES:
                errors[v].append(history.maxima[v])
            if progress is not None:
                progress(f"dt {dt_k:g}: "
                         + " ".join(f"{v}={errors[v][-1]:.3e}" for v in VARIABLES))
    else:
        raise ValueError(f"unknown mode {mode!r}")

    if len(labels) >= 2:
        rates = {v: convergence_rate(errors[v], sizes) for v in VARIABLES}
    else:
        rates = {v: [] for v in VARIABLES}
    table = ConvergenceTable(mode=mode, labels=labels, sizes=sizes,
                             errors=errors, rates=rates,
                             meta={"max_divergence_ratio": ratios,
                                   "histories": histories,
                                   "scenario": scenario, "grid": grid})
    if csv_path is not None:
        table.write_csv(csv_path)
    return table


# -- field sampling ----------------------------------------------------------

def sample_field(mesh, values, points, tol=1e-10):
    """Sample an elementwise-linear field at arbitrary points.

    ``values`` has shape (nt, 3) or (nt, 3, c) (vertex values per element).
    Points on inter-element boundaries average the contributions of every
    containing element, which keeps sampling symmetric on symmetric meshes.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ginv = np.linalg.inv(mesh.jac)                       # (nt, 2, 2)
    origin = mesh.vertices[mesh.triangles[:, 0]]         # (nt, 2)
    d = points[None, :, :] - origin[:, None, :]
    ref = np.einsum("tij,tpj->tpi", ginv, d)
    lam = np.stack([1.0 - ref[:, :, 0] - ref[:, :, 1],
                    ref[:, :, 0], ref[:, :, 1]], axis=2)     # (nt, np, 3)
    inside = lam.min(axis=2) >= -tol
    counts = inside.sum(axis=0).astype(float)
    if np.any(counts == 0):
        raise ValueError("sample point outside the mesh")
    vals = np.asarray(values, dtype=float)
    scalar = vals.ndim == 2
    if scalar:
        vals = vals[:, :, None]
    contrib = np.einsum("tpl,tlc->tpc", lam * inside[:, :, None], vals)
    out = contrib.sum(axis=0) / counts[:, None]
    return out[:, 0] if scalar else out


# -- lid-driven cavity -------------------------------------------------------

@dataclass
class CavityResult:
    mesh: object
    state: object
    solver: object
    s: float
    lid: float
    steps: int
    steady_residual: float
    net_boundary_flux: float
    psi_corner: float
    profiles: dict

    def profile_rows(self):
        out = [["line", "coord", "ux", "uy", "psi"]]
        for line in ("vertical", "horizontal"):
            p = self.profiles[line]
            for i in range(len(p["coord"])):
                out.append([line, f"{p['coord'][i]:.8f}",
                            f"{p['ux'][i]:.10e}", f"{p['uy'][i]:.10e}",
                            f"{p['psi'][i]:.10e}"])
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.profile_rows())


def cavity_marker(n, pin="corner"):
    """Boundary marker for the unit-square cavity.

    pin="corner" makes the single bottom edge next to the lower-left corner
    a natural (zero pseudo-traction) edge, anchoring the pressure there;
    pin="none" keeps the whole boundary essential (the projection system is
    then singular and solved with constant deflation).
    """
    if pin not in ("corner", "none"):
        raise ValueError(f"unknown pin {pin!r}")

    def marker(x, y):
        if pin == "corner" and abs(y) < _SIDE_TOL and x < 1.0 / n:
            return "neumann"
        return "dirichlet"

    return marker


def cavity_velocity(s, lid=1.0):
    """Boundary velocity: lid (y=1) moves with speed ``lid``, the bottom
    wall with speed ``s``, side walls are no slip."""

    def u_b(x, y, t):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(x.shape + (2,))
        out[..., 0] = np.where(_on(y, 1.0), lid,
                               np.where(_on(y, 0.0), s, 0.0))
        return out

    return u_b


def run_cavity(s=0.0, n=16, pattern="crisscross", dt=0.05, t_final=20.0,
               nu=1.0, pin="corner", lid=1.0, steady_tol=1e-10,
               n_samples=41, csv_path=None, progress=None):
    """March the cavity flow to steady state and sample midline profiles.

    ``s`` is the bottom-wall speed (+lid, 0, -lid reproduce the three
    standard configurations).  Time stepping stops once the velocity DOF
    increment per unit time drops below ``steady_tol`` times the field
    scale, or at ``t_final``.  Profiles of (u_x, u_y, psi) are sampled along
    the vertical midline x=1/2 and the horizontal midline y=1/2; boundary
    sample points report the prescribed wall velocity.
    """
    marker = cavity_marker(n, pin)
    mesh = structured_square(n, (0.0, 0.0), (1.0, 1.0), marker, pattern=pattern)
    problem = StokesProblem(nu=nu, dirichlet_velocity=cavity_velocity(s, lid))
    solver = ProjectionSolver(mesh, problem, dt)
    state = solver.initialize()

    n_steps = int(round(t_final / dt))
    residual = np.inf
    prev = state.u.dofs.copy()
    for k in range(n_steps):
        solver.advance(state)
        scale = max(np.abs(state.u.dofs).max(), 1e-30)
        residual = np.abs(state.u.dofs - prev).max() / (dt * scale)
        prev = state.u.dofs.copy()
        if progress is not None and (k + 1) % 50 == 0:
            progress(f"step {k + 1}: steady residual {residual:.3e}")
        if residual <= steady_tol:
            break

    vals_u = state.u.node_values()[:, :3, :]   # divergence-free -> linear
    vals_p = state.psi.values
    coord = np.linspace(0.0, 1.0, n_samples)
    psi_corner = float(sample_field(mesh, vals_p, [[0.0, 0.0]])[0])
    if pin == "none":
        vals_p = vals_p - psi_corner

    profiles = {}
    for line, pts in (("vertical", np.stack([np.full_like(coord, 0.5), coord], axis=1)),
                      ("horizontal", np.stack([coord, np.full_like(coord, 0.5)], axis=1))):
        uv = sample_field(mesh, vals_u, pts)
        pv = sample_field(mesh, vals_p, pts)
        boundary = _on(pts[:, 0], 0.0) | _on(pts[:, 0], 1.0) \
            | _on(pts[:, 1], 0.0) | _on(pts[:, 1], 1.0)
        if boundary.any():
            ub = cavity_velocity(s, lid)(pts[boundary, 0], pts[boundary, 1], state.t)
            uv[boundary] = ub
        profiles[line] = {"coord": coord.copy(),
                          "ux": uv[:, 0], "uy": uv[:, 1], "psi": pv}

    result = CavityResult(
        mesh=mesh, state=state, solver=solver, s=s, lid=lid,
        steps=state.step, steady_residual=float(residual),
        net_boundary_flux=float(state.u.boundary_flux()),
        psi_corner=psi_corner, profiles=profiles)
    if csv_path is not None:
        result.write_csv(csv_path)
    return result


# -- unforced decay (energy ledger experiment) -------------------------------

def vortex_velocity(amplitude=1.0):
    """Divergence-free initial field on the unit square, zero on the walls:
    the curl of the biquadratic bubble sin^2(pi x) sin^2(pi y)."""

    def u0(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        sx, cx = np.sin(np.pi * x), np.cos(np.pi * x)
        sy, cy = np.sin(np.pi * y), np.cos(np.pi * y)
        return amplitude * np.stack([2.0 * np.pi * sx * sx * sy * cy,
                                     -2.0 * np.pi * sx * cx * sy * sy], axis=-1)

    return u0


def run_decay(n=16, dt=1e-2, n_steps=500, nu=1.0, pattern="right",
              amplitude=1.0, progress=None, on_step=None):
    """Unforced decay from the vortex field under homogeneous essential
    boundary conditions; returns (solver, state) with the energy ledger
    filled in.  on_step(solver, state), when given, runs after every step."""
    mesh = structured_square(n, (0.0, 0.0), (1.0, 1.0), "dirichlet",
                             pattern=pattern)
    problem = StokesProblem(nu=nu, initial_velocity=vortex_velocity(amplitude))
    solver = ProjectionSolver(mesh, problem, dt)
    state = solver.initialize()
    for k in range(n_steps):
        solver.advance(state)
        if on_step is not None:
            on_step(solver, state)
        if progress is not None and (k + 1) % 100 == 0:
            row = solver.ledger.rows[-1]
            progress(f"step {k + 1}: lhs={row['lhs']:.6e} rhs={row['rhs']:.6e}")
    return solver, state
