"""Time stepping for the incremental pressure-correction projection scheme.

Each step advances the unsteady Stokes fields through four stages:

1. Predictor: a stress-velocity mixed solve per velocity component.  The
   viscous stress rows sigma_x, sigma_y live in the flux space with the
   nodal-quadrature Gram; the predicted velocity u_tilde is elementwise
   linear and discontinuous.  Stress data on the natural-condition boundary
   part is imposed essentially as Sigma_b - Psi_b^n n with the boundary
   pressure lagged one step.
2. Boundary pressure update on the natural part:
   Psi_b^{n+1} = (Sigma_b + nu grad(u_tilde) n) . n, stored as per-edge
   linear endpoint pairs (grad u_tilde is constant per element).
3. Projection: a velocity-pressure mixed solve for the H(div) velocity
   u^{n+1} and the pressure increment; u^{n+1} comes out pointwise
   divergence free, which also makes it elementwise linear.
4. Pressure-gradient update, a pure DOF-wise arithmetic identity:
   q^{n+1}(r) = q^n(r) - (u^{n+1}(r) - u_tilde(r)) / dt at element vertices.

Both Schur operators are assembled and factored once; per-step work is
sparse matrix-vector products plus preconditioned CG solves (warm started
from the previous step).  The x- and y-component predictor solves are
independent of each other.

A StabilityLedger accumulates the energy inequality

    dt * sum nu^{-1}||sigma||^2 + 1/2||u^N||^2 + 1/2 sum||u - u_tilde||^2
        + dt^2/2 ||q^N||^2  <=  1/2||u^0||^2 + dt^2/2 ||q^0||^2

with exactly integrated L2 norms, which holds for homogeneous Dirichlet
runs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .assembly import build_schur
from .mesh import DIRICHLET, NEUMANN
from .quadrature import DEGREE5, MIDPOINT3, edge_rule, physical_points
from .spaces import (FluxSpace, HdivField, P1Field, P1VectorField, barycentric,
                     edge_trace_projection, interpolate_flux, p1_mass_apply,
                     project_p1, project_p1_vector)


@dataclass
class StokesProblem:
    """Problem data: viscosity plus vectorized field callables.

    dirichlet_velocity, neumann_stress, forcing: (x, y, t) -> vectors.
    initial_velocity: (x, y) -> vectors; initial_pressure: (x, y) -> scalars;
    initial_pressure_gradient: (x, y) -> vectors.  None means zero.  The
    callables must accept coordinate arrays of any shape; vector-valued ones
    return components stacked on a trailing axis.
    """

    nu: float = 1.0
    dirichlet_velocity: Optional[Callable] = None
    neumann_stress: Optional[Callable] = None
    forcing: Optional[Callable] = None
    initial_velocity: Optional[Callable] = None
    initial_pressure: Optional[Callable] = None
    initial_pressure_gradient: Optional[Callable] = None


@dataclass
class SolverState:
    t: float
    step: int
    u: HdivField
    u_tilde: P1VectorField
    psi: P1Field
    q: P1VectorField
    psi_b: np.ndarray                     # (n_neumann_edges, 2) endpoint values
    sigma_x: Optional[HdivField] = None
    sigma_y: Optional[HdivField] = None


def field_norm_sq(fld, rule=MIDPOINT3):
    """Exact L2 norm squared of a mesh field via an element rule."""
    mesh = fld.space.mesh if hasattr(fld, "space") else fld.mesh
    vals = fld.eval_ref(rule.points)
    if vals.ndim == 3:
        sq = np.sum(vals * vals, axis=2)
    else:
        sq = vals * vals
    return float(np.sum(mesh.areas * (sq @ rule.weights)))


def field_diff_norm_sq(a, b, rule=DEGREE5):
    mesh = a.space.mesh if hasattr(a, "space") else a.mesh
    d = a.eval_ref(rule.points) - b.eval_ref(rule.points)
    return float(np.sum(mesh.areas * (np.sum(d * d, axis=2) @ rule.weights)))


class StabilityLedger:
    """Running check of the projection scheme's energy inequality.

    Norms are exactly integrated: the stress squares are elementwise quartic
    (degree-5 rule); every velocity/gradient entering a norm is elementwise
    linear, for which the 3-point rule is exact.
    """

    def __init__(self, nu, dt):
        self.nu = nu
        self.dt = dt
        self.sum_sigma = 0.0
        self.sum_drift = 0.0
        self.rhs = 0.0
        self.rows = []

    def set_reference(self, u0, q0):
        self.rhs = (0.5 * field_norm_sq(u0, DEGREE5)
                    + 0.5 * self.dt ** 2 * field_norm_sq(q0))

    def record(self, state):
        sig = (field_norm_sq(state.sigma_x, DEGREE5)
               + field_norm_sq(state.sigma_y, DEGREE5))
        self.sum_sigma += self.dt / self.nu * sig
        self.sum_drift += 0.5 * field_diff_norm_sq(state.u, state.u_tilde)
        lhs = (self.sum_sigma
               + 0.5 * field_norm_sq(state.u, DEGREE5)
               + self.sum_drift
               + 0.5 * self.dt ** 2 * field_norm_sq(state.q))
        self.rows.append({
            "step": state.step, "time": state.t,
            "dissipation": self.sum_sigma, "kinetic": 0.5 * field_norm_sq(state.u, DEGREE5),
            "drift": self.sum_drift, "gradient": 0.5 * self.dt ** 2 * field_norm_sq(state.q),
            "lhs": lhs, "rhs": self.rhs, "ok": bool(lhs <= self.rhs),
        })

    @property
    def satisfied(self):
        return all(r["ok"] for r in self.rows)


def weak_divergence(mesh, f):
    """P1 projection of div f computed weakly from the callable itself:
    (div f, hat_l)_E = -(f, grad hat_l)_E + <f.n, hat_l>_dE by quadrature.

    Vanishes (to quadrature accuracy) for divergence-free fields regardless
    of mesh resolution, unlike the divergence of the nodal interpolant.
    """
    nt = mesh.n_triangles
    pts = physical_points(mesh, DEGREE5)
    flat = pts.reshape(-1, 2)
    fv = np.asarray(f(flat[:, 0], flat[:, 1]), dtype=float).reshape(nt, -1, 2)
    grads = np.einsum("tij,lj->tli", np.linalg.inv(mesh.jac).transpose(0, 2, 1),
                      np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]))
    loads = -mesh.areas[:, None] * np.einsum("q,tqc,tlc->tl",
                                             DEGREE5.weights, fv, grads)
    s, w = edge_rule(3)
    for le in range(3):
        l0, l1 = le, (le + 1) % 3
        a = mesh.vertices[mesh.triangles[:, l0]]
        b = mesh.vertices[mesh.triangles[:, l1]]
        x = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        ev = np.asarray(f(x[:, :, 0].ravel(), x[:, :, 1].ravel()),
                        dtype=float).reshape(nt, len(s), 2)
        ge = mesh.elem_edges[:, le]
        n_out = (mesh.elem_edge_signs[:, le:le + 1] * mesh.edge_normals[ge])
        un = np.einsum("tqc,tc->tq", ev, n_out)
        ln = mesh.edge_lengths[ge]
        loads[:, l0] += ln * (un @ (w * (1.0 - s)))
        loads[:, l1] += ln * (un @ (w * s))
    # invert the 3x3 element mass matrix (closed form)
    minv = 3.0 * np.array([[3.0, -1.0, -1.0], [-1.0, 3.0, -1.0], [-1.0, -1.0, 3.0]])
    return (loads @ minv.T) / mesh.areas[:, None]


class _EdgeQuad:
    """Precomputed 3-point Gauss data on a set of edges, for loads against
    the linear trace basis."""

    def __init__(self, mesh, eids, npts=3):
        self.eids = np.asarray(eids, dtype=np.int64)
        s, w = edge_rule(npts)
        a = mesh.vertices[mesh.edges[self.eids, 0]]
        b = mesh.vertices[mesh.edges[self.eids, 1]]
        self.x = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        self.w = w
        self.hat = np.stack([1.0 - s, s], axis=0)      # (2, npts)
        self.lengths = mesh.edge_lengths[self.eids]

    def sample(self, f, t):
        flat = self.x.reshape(-1, 2)
        vals = np.asarray(f(flat[:, 0], flat[:, 1], t), dtype=float)
        return vals.reshape(self.x.shape[0], len(self.w), -1)

    def loads(self, vals):
        """Int_e f hat_p ds per edge; vals has shape (n_edges, npts)."""
        return self.lengths[:, None] * np.einsum("q,pq,eq->ep", self.w, self.hat, vals)


class ProjectionSolver:
    """Assembles both half-step operators once and advances the state."""

    def __init__(self, mesh, problem, dt, predictor_tol=1e-10,
                 projection_tol=1e-13):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        self.mesh = mesh
        self.problem = problem
        self.dt = dt
        self.predictor_tol = predictor_tol
        self.projection_tol = projection_tol
        self.space = FluxSpace(mesh)

        nu = problem.nu
        self.predictor_op = build_schur(self.space, 1.0 / nu, 1.0 / dt,
                                        essential_marker=NEUMANN).factor()
        self.projection_op = build_schur(self.space, 1.0 / dt, 0.0,
                                         essential_marker=DIRICHLET).factor()

        self.dirichlet_edges = mesh.boundary_edges(DIRICHLET)
        self.neumann_edges = mesh.boundary_edges(NEUMANN)
        self._dir_quad = _EdgeQuad(mesh, self.dirichlet_edges)
        ne = self.neumann_edges
        self._neumann_endpoints = mesh.vertices[mesh.edges[ne]]   # (nn, 2, 2)
        self._neumann_normals = mesh.edge_normals[ne]
        self._neumann_lengths = mesh.edge_lengths[ne]
        self._neumann_elems = mesh.edge_elems[ne, 0]

        self._p5 = physical_points(mesh, DEGREE5)
        self._hat5 = barycentric(DEGREE5.points)
        self._hat3 = barycentric(MIDPOINT3.points)
        self._P_op = self._build_projection_source()
        self._warm = {"ux": None, "uy": None, "dpsi": None}
        self.ledger = StabilityLedger(nu, dt)
        self.diagnostics = []

    # -- setup ---------------------------------------------------------------

    def _build_projection_source(self):
        """Sparse map from u_tilde vertex values (nt, 3, 2 raveled) to the
        nodal-quadrature pairing (u_tilde, tau_i)_Q for every flux DOF i."""
        import scipy.sparse as sp
        space, mesh = self.space, self.mesh
        nt = mesh.n_triangles
        tids = np.arange(nt)
        rows, cols, vals = [], [], []
        for v in range(3):
            Ninv = space.vertex_Ninv[:, v]
            for k in range(2):
                for i in range(2):
                    rows.append(space.ldof_gdof[:, 2 * v + k])
                    cols.append(6 * tids + 2 * v + i)
                    vals.append(mesh.areas / 12.0 * Ninv[:, i, k])
        for c in range(2):
            for v in range(3):
                rows.append(space.n_edge_dofs + 2 * tids + c)
                cols.append(6 * tids + 2 * v + c)
                vals.append(mesh.areas / 4.0)
        return sp.csr_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(space.n_dofs, 6 * nt))

    # -- initialization ------------------------------------------------------

    def initialize(self):
        mesh, space, pb = self.mesh, self.space, self.problem
        if pb.initial_velocity is None:
            u = HdivField(space)
        else:
            u = interpolate_flux(space, pb.initial_velocity)
            scale = np.abs(u.dofs).max()
            if scale > 0.0:
                wd = np.abs(weak_divergence(mesh, pb.initial_velocity)).max()
                if wd > 1e-3 * scale / mesh.h:
                    warnings.warn(
                        "initial velocity is not divergence free (weak "
                        f"divergence {wd:.3e} at field scale {scale:.3e})")
        psi = (P1Field(mesh) if pb.initial_pressure is None
               else project_p1(mesh, pb.initial_pressure))
        q = (P1VectorField(mesh) if pb.initial_pressure_gradient is None
             else project_p1_vector(mesh, pb.initial_pressure_gradient))
        psi_b = np.zeros((len(self.neumann_edges), 2))
        if pb.initial_pressure is not None and len(self.neumann_edges):
            for p in range(2):
                xy = self._neumann_endpoints[:, p]
                psi_b[:, p] = np.asarray(pb.initial_pressure(xy[:, 0], xy[:, 1]))
        state = SolverState(t=0.0, step=0, u=u, u_tilde=P1VectorField(mesh),
                            psi=psi, q=q, psi_b=psi_b)
        self.ledger = StabilityLedger(pb.nu, self.dt)
        self.ledger.set_reference(u, q)
        self.diagnostics = []
        return state

    # -- individual stages ---------------------------------------------------

    def _predictor_cell_loads(self, state, t1):
        """Exact cell-equation loads (1/dt)(u^n, xi) - (q^n, xi) + (f, xi)."""
        mesh = self.mesh
        uv = state.u.eval_ref(MIDPOINT3.points)            # (nt, 3, 2)
        base = np.einsum("q,tqc,ql->tlc", MIDPOINT3.weights, uv, self._hat3)
        base *= mesh.areas[:, None, None] / self.dt
        for c in range(2):
            base[:, :, c] -= p1_mass_apply(mesh, state.q.values[:, :, c])
        if self.problem.forcing is not None:
            flat = self._p5.reshape(-1, 2)
            fv = np.asarray(self.problem.forcing(flat[:, 0], flat[:, 1], t1))
            fv = fv.reshape(mesh.n_triangles, len(DEGREE5.weights), 2)
            base += (mesh.areas[:, None, None]
                     * np.einsum("q,tqc,ql->tlc", DEGREE5.weights, fv, self._hat5))
        return base[:, :, 0].ravel(), base[:, :, 1].ravel()

    def predictor_step(self, state):
        """Solve both component predictor problems at t^{n+1}; fills in
        state.u_tilde, state.sigma_x, state.sigma_y."""
        pb, space = self.problem, self.space
        t1 = state.t + self.dt
        K = space.n_dofs
        ne, de = self.neumann_edges, self.dirichlet_edges

        cons = [np.zeros(K), np.zeros(K)]
        if len(ne):
            for c in range(2):
                if pb.neumann_stress is not None:
                    pairs = edge_trace_projection(
                        self.mesh, ne,
                        lambda x, y: np.asarray(pb.neumann_stress(x, y, t1))[..., c])
                else:
                    pairs = np.zeros((len(ne), 2))
                pairs = pairs - state.psi_b * self._neumann_normals[:, c:c + 1]
                cons[c][2 * ne] = pairs[:, 0]
                cons[c][2 * ne + 1] = pairs[:, 1]

        G = [np.zeros(K), np.zeros(K)]
        if len(de) and pb.dirichlet_velocity is not None:
            vals = self._dir_quad.sample(pb.dirichlet_velocity, t1)
            for c in range(2):
                ld = self._dir_quad.loads(vals[:, :, c])
                G[c][2 * de] -= ld[:, 0]
                G[c][2 * de + 1] -= ld[:, 1]

        rhs_x, rhs_y = self._predictor_cell_loads(state, t1)
        Ux, fx, rx = self.predictor_op.solve(G[0], cons[0], rhs_x,
                                             rel_tol=self.predictor_tol,
                                             x0=self._warm["ux"])
        Uy, fy, ry = self.predictor_op.solve(G[1], cons[1], rhs_y,
                                             rel_tol=self.predictor_tol,
                                             x0=self._warm["uy"])
        if not (rx.converged and ry.converged):
            raise RuntimeError("predictor PCG did not converge "
                               f"(residuals {rx.relative_residual:.2e}, "
                               f"{ry.relative_residual:.2e})")
        self._warm["ux"], self._warm["uy"] = Ux, Uy
        nt = self.mesh.n_triangles
        state.u_tilde.values[:, :, 0] = Ux.reshape(nt, 3)
        state.u_tilde.values[:, :, 1] = Uy.reshape(nt, 3)
        state.sigma_x = HdivField(space, fx)
        state.sigma_y = HdivField(space, fy)
        return state.sigma_x, state.sigma_y, state.u_tilde

    def update_boundary_pressure(self, state):
        """Boundary pressure at t^{n+1} on the natural part, endpoint pairs:
        (Sigma_b + nu grad(u_tilde) n) . n."""
        pb = self.problem
        t1 = state.t + self.dt
        if len(self.neumann_edges) == 0:
            return np.zeros((0, 2))
        grads = state.u_tilde.gradients()[self._neumann_elems]   # (nn, 2, 2)
        n = self._neumann_normals
        visc = pb.nu * np.einsum("ei,eij,ej->e", n, grads, n)
        new = np.empty_like(state.psi_b)
        for p in range(2):
            xy = self._neumann_endpoints[:, p]
            if pb.neumann_stress is not None:
                sb = np.asarray(pb.neumann_stress(xy[:, 0], xy[:, 1], t1))
                new[:, p] = np.einsum("ei,ei->e", sb, n) + visc
            else:
                new[:, p] = visc
        return new

    def projection_step(self, state, psi_b_new):
        """Project u_tilde onto divergence-free H(div) velocity; updates
        state.psi in place and returns (u_new, pcg_result)."""
        pb, space = self.problem, self.space
        t1 = state.t + self.dt
        ne, de = self.neumann_edges, self.dirichlet_edges

        G = self._P_op @ (state.u_tilde.values.ravel() / self.dt)
        if len(ne):
            dpsi = psi_b_new - state.psi_b
            ln = self._neumann_lengths
            G[2 * ne] -= ln * (dpsi[:, 0] / 3.0 + dpsi[:, 1] / 6.0)
            G[2 * ne + 1] -= ln * (dpsi[:, 0] / 6.0 + dpsi[:, 1] / 3.0)

        c = np.zeros(space.n_dofs)
        if len(de) and pb.dirichlet_velocity is not None:
            px = edge_trace_projection(
                self.mesh, de,
                lambda x, y: np.asarray(pb.dirichlet_velocity(x, y, t1))[..., 0])
            py = edge_trace_projection(
                self.mesh, de,
                lambda x, y: np.asarray(pb.dirichlet_velocity(x, y, t1))[..., 1])
            nrm = self.mesh.edge_normals[de]
            pairs = px * nrm[:, 0:1] + py * nrm[:, 1:2]
            c[2 * de] = pairs[:, 0]
            c[2 * de + 1] = pairs[:, 1]

        U, flux, res = self.projection_op.solve(
            G, c, np.zeros(space.n_wdofs), rel_tol=self.projection_tol,
            x0=self._warm["dpsi"])
        if not res.converged:
            raise RuntimeError("projection PCG did not converge "
                               f"(residual {res.relative_residual:.2e})")
        self._warm["dpsi"] = U
        state.psi.values += U.reshape(self.mesh.n_triangles, 3)
        return HdivField(space, flux), res

    def update_pressure_gradient(self, state, u_new):
        """DOF-wise update q(r) -= (u^{n+1}(r) - u_tilde(r)) / dt; exact
        because the divergence-free velocity is elementwise linear."""
        un = u_new.node_values()[:, :3, :]
        state.q.values -= (un - state.u_tilde.values) / self.dt

    # -- full step -----------------------------------------------------------

    def advance(self, state):
        self.predictor_step(state)
        psi_b_new = self.update_boundary_pressure(state)
        u_new, _ = self.projection_step(state, psi_b_new)
        self.update_pressure_gradient(state, u_new)
        state.u = u_new
        state.psi_b = psi_b_new
        state.t += self.dt
        state.step += 1
        self.ledger.record(state)
        self.diagnostics.append(self._step_diagnostics(state))
        return state

    def run(self, state, n_steps):
        for _ in range(n_steps):
            self.advance(state)
        return state

    def _step_diagnostics(self, state):
        dofs = np.abs(state.u.dofs).max()
        div = np.abs(state.u.div_node_values()).max()
        ratio = div * self.mesh.h / dofs if dofs > 0.0 else 0.0
        qv = state.q.eval_ref(MIDPOINT3.points)
        uv = state.u.eval_ref(MIDPOINT3.points)
        inner = float(np.sum(self.mesh.areas
                             * (np.sum(qv * uv, axis=2) @ MIDPOINT3.weights)))
        qn = field_norm_sq(state.q)
        un = field_norm_sq(state.u)
        denom = np.sqrt(qn * un)
        return {
            "step": state.step, "time": state.t,
            "max_divergence": div, "divergence_ratio": ratio,
            "q_orthogonality": inner / denom if denom > 0.0 else 0.0,
        }

    @property
    def max_divergence_ratio(self):
        if not self.diagnostics:
            return 0.0
        return max(d["divergence_ratio"] for d in self.diagnostics)
