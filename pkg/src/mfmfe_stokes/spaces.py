"""Mixed finite element spaces on triangles.

Flux space: the 8-dimensional second-order H(div) element whose degrees of
freedom are normal components at both endpoints of each edge plus the vector
value at the centroid.  On the reference triangle (vertices (0,0), (1,0),
(0,1)) the basis satisfies a Kronecker property at those nodes: basis (k, j)
has unit normal component against the j-th edge normal at node k and zero at
every other node/normal pair.  At vertex k, slot j=1 belongs to the edge
arriving at the vertex in counterclockwise traversal and j=2 to the departing
edge; at the centroid the two "normals" are the Cartesian axes.  Fields map
under the Piola transform v = J vhat / det J, which preserves normal traces
and divergences in the usual weighted sense.

Global flux DOFs are physical quantities: the normal component along the
edge's global normal at each edge endpoint, and the Cartesian components of
the field at each centroid.  This makes nodal interpolation and the nodal
quadrature rule act directly on DOF values: the field value at a vertex,
seen from one element, solves the 2x2 system formed by the two incident edge
normals there.

Pressure-side space: discontinuous linears with values at the 3 element
vertices as DOFs.
"""

from __future__ import annotations

import numpy as np

_R2 = np.sqrt(2.0)

# Basis coefficients over the monomials [1, x, y, x^2, xy, y^2], flat slot
# order (vertex1 arriving, vertex1 departing, v2 arr, v2 dep, v3 arr, v3 dep,
# centroid x, centroid y).
RT1_X = np.array([
    [-1.0, 3.0, 1.0, -2.0, -1.0, 0.0],
    [0.0, 1.0, 0.0, -1.0, -2.0, 0.0],
    [0.0, 0.0, 0.0, 1.0, -1.0, 0.0],
    [0.0, -_R2, 0.0, 2.0 * _R2, _R2, 0.0],
    [0.0, -_R2, 0.0, _R2, 2.0 * _R2, 0.0],
    [0.0, 1.0, -1.0, -1.0, 1.0, 0.0],
    [0.0, 6.0, 0.0, -6.0, -3.0, 0.0],
    [0.0, 3.0, 0.0, -3.0, -6.0, 0.0],
])
RT1_Y = np.array([
    [0.0, 0.0, 1.0, 0.0, -2.0, -1.0],
    [-1.0, 1.0, 3.0, 0.0, -1.0, -2.0],
    [0.0, -1.0, 1.0, 0.0, 1.0, -1.0],
    [0.0, 0.0, -_R2, 0.0, 2.0 * _R2, _R2],
    [0.0, 0.0, -_R2, 0.0, _R2, 2.0 * _R2],
    [0.0, 0.0, 0.0, 0.0, -1.0, 1.0],
    [0.0, 0.0, 3.0, 0.0, -6.0, -3.0],
    [0.0, 0.0, 6.0, 0.0, -3.0, -6.0],
])
# Divergences over [1, x, y].
RT1_DIV = np.array([
    [4.0, -6.0, -3.0],
    [4.0, -3.0, -6.0],
    [1.0, 3.0, -3.0],
    [-2.0 * _R2, 6.0 * _R2, 3.0 * _R2],
    [-2.0 * _R2, 3.0 * _R2, 6.0 * _R2],
    [1.0, -3.0, 3.0],
    [9.0, -18.0, -9.0],
    [9.0, -9.0, -18.0],
])

# Reference outward edge normals indexed by local edge (bottom, hyp, left).
REF_EDGE_NORMALS = np.array([[0.0, -1.0],
                             [1.0 / _R2, 1.0 / _R2],
                             [-1.0, 0.0]])
REF_EDGE_LENGTHS = np.array([1.0, _R2, 1.0])
REF_NODES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0],
                      [1.0 / 3.0, 1.0 / 3.0]])

# slot -> (local node 0..3, local edge or -1 for centroid slots)
SLOT_NODE = np.array([0, 0, 1, 1, 2, 2, 3, 3])
SLOT_EDGE = np.array([2, 0, 0, 1, 1, 2, -1, -1])


def monomials(points):
    """[1, x, y, x^2, xy, y^2] at reference points, shape (npts, 6)."""
    p = np.atleast_2d(points)
    x, y = p[:, 0], p[:, 1]
    return np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=1)


def ref_basis_values(points):
    """Reference basis values, shape (npts, 2, 8)."""
    m = monomials(points)
    return np.stack([m @ RT1_X.T, m @ RT1_Y.T], axis=1)


def ref_div_values(points):
    """Reference basis divergences, shape (npts, 8)."""
    p = np.atleast_2d(points)
    m = np.stack([np.ones(len(p)), p[:, 0], p[:, 1]], axis=1)
    return m @ RT1_DIV.T


class FluxSpace:
    """Degree-of-freedom bookkeeping for the flux element on a mesh.

    DOF layout: 2 per edge (endpoint order follows the edge's sorted vertex
    pair), then 2 per element centroid.  n_dofs = 2*n_edges + 2*n_triangles.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        self.n_edge_dofs = 2 * mesh.n_edges
        self.n_dofs = self.n_edge_dofs + 2 * mesh.n_triangles
        self.n_wdofs = 3 * mesh.n_triangles
        self._build_local_maps()

    def edge_dof(self, eid, endpoint):
        return 2 * eid + endpoint

    def centroid_dof(self, tid, comp):
        return self.n_edge_dofs + 2 * tid + comp

    def wdof(self, tid, local):
        return 3 * tid + local

    def _build_local_maps(self):
        mesh = self.mesh
        nt = mesh.n_triangles
        ldof = np.empty((nt, 8), dtype=np.int64)
        scale = np.ones((nt, 8))
        for slot in range(6):
            node = SLOT_NODE[slot]
            ledge = SLOT_EDGE[slot]
            gedge = mesh.elem_edges[:, ledge]
            vtx = mesh.triangles[np.arange(nt), node]
            endpoint = (mesh.edges[gedge, 0] != vtx).astype(np.int64)
            ldof[:, slot] = 2 * gedge + endpoint
            scale[:, slot] = (mesh.elem_edge_signs[:, ledge]
                              * mesh.edge_lengths[gedge] / REF_EDGE_LENGTHS[ledge])
        ldof[:, 6] = self.n_edge_dofs + 2 * np.arange(nt)
        ldof[:, 7] = ldof[:, 6] + 1
        self.ldof_gdof = ldof
        self.ldof_scale = scale

        # adj(J): maps physical centroid components to reference coefficients.
        J = mesh.jac
        adj = np.empty_like(J)
        adj[:, 0, 0] = J[:, 1, 1]
        adj[:, 0, 1] = -J[:, 0, 1]
        adj[:, 1, 0] = -J[:, 1, 0]
        adj[:, 1, 1] = J[:, 0, 0]
        self.adjJ = adj

        # Vertex-value recovery: at local vertex v the field solves
        # [n_arriving; n_departing] value = (dof_arriving, dof_departing)
        # with global edge normals and global DOF values.
        Ninv = np.empty((nt, 3, 2, 2))
        for v in range(3):
            e_arr = mesh.elem_edges[:, (v - 1) % 3]
            e_dep = mesh.elem_edges[:, v]
            N = np.stack([mesh.edge_normals[e_arr], mesh.edge_normals[e_dep]], axis=1)
            det = N[:, 0, 0] * N[:, 1, 1] - N[:, 0, 1] * N[:, 1, 0]
            Ninv[:, v, 0, 0] = N[:, 1, 1] / det
            Ninv[:, v, 0, 1] = -N[:, 0, 1] / det
            Ninv[:, v, 1, 0] = -N[:, 1, 0] / det
            Ninv[:, v, 1, 1] = N[:, 0, 0] / det
        self.vertex_Ninv = Ninv

    # -- local coefficient handling ------------------------------------------

    def local_dofs(self, dofs):
        """Gather global DOF values per element, shape (nt, 8)."""
        return np.asarray(dofs)[self.ldof_gdof]

    def ref_coeffs(self, dofs):
        """Reference-basis coefficients per element, shape (nt, 8)."""
        ld = self.local_dofs(dofs)
        c = ld * self.ldof_scale
        c[:, 6:8] = np.einsum("tij,tj->ti", self.adjJ, ld[:, 6:8])
        return c


class HdivField:
    """A flux-space field: global DOF vector plus evaluation helpers."""

    def __init__(self, space, dofs=None, kind="flux"):
        self.space = space
        self.dofs = np.zeros(space.n_dofs) if dofs is None else np.asarray(dofs, dtype=float)
        self.kind = kind

    def copy(self):
        return HdivField(self.space, self.dofs.copy(), self.kind)

    def node_values(self):
        """Field vectors at the 4 DOF nodes per element, shape (nt, 4, 2)."""
        space = self.space
        mesh = space.mesh
        ld = space.local_dofs(self.dofs)
        out = np.empty((mesh.n_triangles, 4, 2))
        for v in range(3):
            d = ld[:, 2 * v:2 * v + 2]
            out[:, v] = np.einsum("tij,tj->ti", space.vertex_Ninv[:, v], d)
        out[:, 3] = ld[:, 6:8]
        return out

    def eval_ref(self, points):
        """Evaluate at reference points in every element, shape (nt, npts, 2)."""
        space = self.space
        mesh = space.mesh
        c = space.ref_coeffs(self.dofs)
        vhat = ref_basis_values(points)          # (npts, 2, 8)
        ref_vals = np.einsum("pak,tk->tpa", vhat, c)
        Jscaled = mesh.jac / mesh.jac_det[:, None, None]
        return np.einsum("tab,tpb->tpa", Jscaled, ref_vals)

    def div_ref(self, points):
        """Divergence at reference points in every element, shape (nt, npts)."""
        space = self.space
        c = space.ref_coeffs(self.dofs)
        dhat = ref_div_values(points)            # (npts, 8)
        return (c @ dhat.T) / space.mesh.jac_det[:, None]

    def div_node_values(self):
        """Divergence at the 3 vertices per element (it is linear there)."""
        return self.div_ref(REF_NODES[:3])

    def edge_normal_trace(self, eid):
        """Endpoint values of v . n_edge along the edge (linear in between)."""
        return self.dofs[2 * eid], self.dofs[2 * eid + 1]

    def boundary_flux(self):
        """Sum over boundary edges of the edge integrals of v . n (outward)."""
        mesh = self.space.mesh
        total = 0.0
        for e in mesh.boundary_edges():
            d0, d1 = self.dofs[2 * e], self.dofs[2 * e + 1]
            total += 0.5 * (d0 + d1) * mesh.edge_lengths[e]
        return total


class P1Field:
    """Scalar discontinuous piecewise-linear field, values (nt, 3) at vertices."""

    def __init__(self, mesh, values=None):
        self.mesh = mesh
        self.values = (np.zeros((mesh.n_triangles, 3)) if values is None
                       else np.asarray(values, dtype=float))

    def copy(self):
        return P1Field(self.mesh, self.values.copy())

    def eval_ref(self, points):
        lam = barycentric(points)                # (npts, 3)
        return self.values @ lam.T               # (nt, npts)

    def gradients(self):
        """Elementwise constant gradient, shape (nt, 2)."""
        g_ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # (3, 2)
        ginv = np.linalg.inv(self.mesh.jac)                        # J^{-1}
        # grad lambda = J^{-T} gradhat lambda
        grads = np.einsum("tji,lj->tli", ginv, g_ref)
        return np.einsum("tl,tli->ti", self.values, grads)


class P1VectorField:
    """Vector discontinuous piecewise-linear field, values (nt, 3, 2)."""

    def __init__(self, mesh, values=None):
        self.mesh = mesh
        self.values = (np.zeros((mesh.n_triangles, 3, 2)) if values is None
                       else np.asarray(values, dtype=float))

    def copy(self):
        return P1VectorField(self.mesh, self.values.copy())

    def component(self, c):
        return P1Field(self.mesh, self.values[:, :, c])

    def eval_ref(self, points):
        lam = barycentric(points)
        return np.einsum("tlc,pl->tpc", self.values, lam)

    def gradients(self):
        """Elementwise velocity gradient, [t, i, j] = d u_i / d x_j."""
        g_ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        ginv = np.linalg.inv(self.mesh.jac)
        grads = np.einsum("tji,lj->tli", ginv, g_ref)   # (nt, 3, 2)
        return np.einsum("tlc,tlj->tcj", self.values, grads)


def barycentric(points):
    p = np.atleast_2d(points)
    return np.stack([1.0 - p[:, 0] - p[:, 1], p[:, 0], p[:, 1]], axis=1)


# -- single-basis evaluation (generic path used by tests and oracles) --------

def local_basis_value(space, tid, slot, x, y):
    """Physical value of the element-local dual basis for one DOF slot.

    Includes orientation sign and edge-length scaling, so the function has a
    unit global DOF.  x, y may be arrays; returns shape (n, 2).
    """
    mesh = space.mesh
    p0 = mesh.vertices[mesh.triangles[tid, 0]]
    J = mesh.jac[tid]
    det = mesh.jac_det[tid]
    Jinv = np.linalg.inv(J)
    pts = np.stack([np.atleast_1d(x), np.atleast_1d(y)], axis=1)
    ref = (pts - p0) @ Jinv.T
    vhat = ref_basis_values(ref)                 # (n, 2, 8)
    if slot < 6:
        coeff = np.zeros(8)
        coeff[slot] = space.ldof_scale[tid, slot]
    else:
        coeff = np.zeros(8)
        coeff[6:8] = space.adjJ[tid, :, slot - 6]
    ref_vals = vhat @ coeff                      # (n, 2)
    return ref_vals @ (J.T / det)


def local_basis_div(space, tid, slot, x, y):
    """Divergence of the element-local dual basis at physical points."""
    mesh = space.mesh
    p0 = mesh.vertices[mesh.triangles[tid, 0]]
    J = mesh.jac[tid]
    det = mesh.jac_det[tid]
    Jinv = np.linalg.inv(J)
    pts = np.stack([np.atleast_1d(x), np.atleast_1d(y)], axis=1)
    ref = (pts - p0) @ Jinv.T
    dhat = ref_div_values(ref)                   # (n, 8)
    if slot < 6:
        coeff = np.zeros(8)
        coeff[slot] = space.ldof_scale[tid, slot]
    else:
        coeff = np.zeros(8)
        coeff[6:8] = space.adjJ[tid, :, slot - 6]
    return (dhat @ coeff) / det


# -- interpolation and projection -------------------------------------------

def interpolate_flux(space, f, kind="flux"):
    """Nodal interpolant into the flux space.

    f(x, y) -> (n, 2) vectorized.  Edge DOFs are f . n_edge at the edge
    endpoints (global normal); centroid DOFs are the components of f there.
    Reproduces elementwise-linear vector fields exactly.
    """
    mesh = space.mesh
    dofs = np.zeros(space.n_dofs)
    va = mesh.vertices[mesh.edges[:, 0]]
    vb = mesh.vertices[mesh.edges[:, 1]]
    fa = np.asarray(f(va[:, 0], va[:, 1]), dtype=float).reshape(-1, 2)
    fb = np.asarray(f(vb[:, 0], vb[:, 1]), dtype=float).reshape(-1, 2)
    dofs[0:space.n_edge_dofs:2] = np.sum(fa * mesh.edge_normals, axis=1)
    dofs[1:space.n_edge_dofs:2] = np.sum(fb * mesh.edge_normals, axis=1)
    fc = np.asarray(f(mesh.centroids[:, 0], mesh.centroids[:, 1]), dtype=float).reshape(-1, 2)
    dofs[space.n_edge_dofs + 0::2] = fc[:, 0]
    dofs[space.n_edge_dofs + 1::2] = fc[:, 1]
    return HdivField(space, dofs, kind)


_P1_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
_P1_MASS_INV = 3.0 * np.array([[3.0, -1.0, -1.0],
                               [-1.0, 3.0, -1.0],
                               [-1.0, -1.0, 3.0]])


def p1_mass_apply(mesh, values):
    """(f, hat_l)_E for an elementwise-linear f given by vertex values.

    values (nt, 3) -> (nt, 3); the local matrix is |E|/12 [[2,1,1],...].
    """
    return mesh.areas[:, None] * (values @ _P1_MASS.T)


def project_p1(mesh, f):
    """Elementwise L2 projection of a scalar callable onto linears."""
    from .quadrature import DEGREE5, physical_points
    pts = physical_points(mesh, DEGREE5)
    vals = np.asarray(f(pts[:, :, 0], pts[:, :, 1]), dtype=float)
    lam = barycentric(DEGREE5.points)            # (7, 3)
    b = np.einsum("p,tp,pl->tl", DEGREE5.weights, vals, lam)
    return P1Field(mesh, b @ _P1_MASS_INV.T)


def project_p1_vector(mesh, f):
    """Componentwise L2 projection of a vector callable onto linears."""
    from .quadrature import DEGREE5, physical_points
    pts = physical_points(mesh, DEGREE5)
    vals = np.asarray(f(pts[:, :, 0], pts[:, :, 1]), dtype=float).reshape(
        mesh.n_triangles, len(DEGREE5.points), 2)
    lam = barycentric(DEGREE5.points)
    b = np.einsum("p,tpc,pl->tlc", DEGREE5.weights, vals, lam)
    return P1VectorField(mesh, np.einsum("tlc,ml->tmc", b, _P1_MASS_INV))


_EDGE_MASS_INV = np.array([[4.0, -2.0], [-2.0, 4.0]])


def edge_trace_projection(mesh, eids, f):
    """Edgewise L2 projection of a scalar callable onto linears.

    Returns endpoint coefficient values, shape (len(eids), 2).  Exact for
    data that is linear along the edge.
    """
    from .quadrature import edge_rule
    eids = np.asarray(eids, dtype=np.int64)
    s, w = edge_rule(3)
    a = mesh.vertices[mesh.edges[eids, 0]]
    b = mesh.vertices[mesh.edges[eids, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    vals = np.asarray(f(pts[:, :, 0], pts[:, :, 1]), dtype=float)
    shapes = np.stack([1.0 - s, s], axis=1)      # (3, 2)
    rhs = np.einsum("p,ep,pi->ei", w, vals, shapes)
    return rhs @ _EDGE_MASS_INV.T
