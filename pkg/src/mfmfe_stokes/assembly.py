"""Flux elimination and Schur-complement assembly for the mixed method.

Both half steps of the scheme solve a saddle system of the same shape.  With
flux unknowns F (stress rows in the first half step, velocity in the second),
cell unknowns U (velocity components, or the pressure increment), and the
convention

    A F = B U + G          (flux equation, nodal-quadrature Gram A)
    B^T F + D U = rhs_w0   (cell equation; D = mass_weight * P1 mass)

the flux vector is eliminated locally.  The nodal quadrature couples flux
DOFs only where they share a node, so A is block diagonal over small "node
blocks": one block per mesh vertex (all edge-endpoint DOFs there, block size
= number of incident edges) and one 2x2 block per centroid (diagonal, since
centroid DOFs are Cartesian components).  Eliminating F gives the sparse SPD
system

    (D + B^T A_ff^{-1} B) U = rhs_w0 - B^T [A_ff^{-1}(G_f - A_fc c) + c]

where c holds essentially constrained flux DOFs (boundary data).  The Schur
matrix couples only elements sharing a vertex.

Essential constraints remove DOFs on edges with a chosen marker: stress data
on the Neumann part in the first half step, normal velocity on the Dirichlet
part in the second.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .linalg import IncompleteCholesky, pcg
from .mesh import DIRICHLET, NEUMANN
from .quadrature import MIDPOINT3
from .spaces import RT1_DIV, barycentric

_P1_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


class LocalBlock:
    """One node block of the flux Gram matrix.

    owner is ("vertex", vertex_id) or ("centroid", element_id); dofs are the
    member global flux DOFs; A is the dense Gram block; free marks
    unconstrained members; wdofs are the cell DOFs of the adjacent elements
    and B the dense coupling (members x wdofs).
    """

    __slots__ = ("owner", "dofs", "A", "free", "wdofs", "B", "chol")

    def __init__(self, owner, dofs, A, free, wdofs, B):
        self.owner = owner
        self.dofs = dofs
        self.A = A
        self.free = free
        self.wdofs = wdofs
        self.B = B
        nf = int(free.sum())
        if nf:
            self.chol = scipy.linalg.cho_factor(A[np.ix_(free, free)], lower=True)
        else:
            self.chol = None


def _local_divergence_coupling(space):
    """Dense per-element coupling B_loc[t, slot, l] = (hat_l, div tau_slot)_E.

    Exact: divergences are linear, hats are linear, the edge-midpoint rule
    integrates the quadratic product exactly.
    """
    mesh = space.mesh
    nt = mesh.n_triangles
    pts = MIDPOINT3.points
    mono = np.stack([np.ones(len(pts)), pts[:, 0], pts[:, 1]], axis=1)
    divp = RT1_DIV @ mono.T                       # (8, np)
    lam = barycentric(pts)                        # (np, 3)
    # Reference-coefficient map per slot: edge slots scale, centroid slots
    # mix the two centroid reference functions through adj(J).
    C = np.zeros((nt, 8, 8))
    for slot in range(6):
        C[:, slot, slot] = space.ldof_scale[:, slot]
    C[:, 6, 6] = space.adjJ[:, 0, 0]
    C[:, 6, 7] = space.adjJ[:, 1, 0]
    C[:, 7, 6] = space.adjJ[:, 0, 1]
    C[:, 7, 7] = space.adjJ[:, 1, 1]
    divval = np.einsum("tsk,kp->tsp", C, divp)    # (nt, 8, np)
    # |E| / det J = 1/2.
    return 0.5 * np.einsum("p,tsp,pl->tsl", MIDPOINT3.weights, divval, lam)


def _global_B(space, B_loc):
    mesh = space.mesh
    nt = mesh.n_triangles
    rows = np.repeat(space.ldof_gdof, 3, axis=1).ravel()
    wd = (3 * np.arange(nt)[:, None] + np.arange(3)[None, :])
    cols = np.tile(wd, (1, 8)).ravel()
    return sp.csr_matrix((B_loc.ravel(), (rows, cols)),
                         shape=(space.n_dofs, space.n_wdofs))


def _global_gram(space, coeff):
    """Nodal-quadrature Gram matrix of the flux space, scaled by coeff."""
    mesh = space.mesh
    nt = mesh.n_triangles
    rows, cols, vals = [], [], []
    for v in range(3):
        Ninv = space.vertex_Ninv[:, v]            # (nt, 2, 2)
        Gv = np.einsum("tki,tkj->tij", Ninv, Ninv)
        w = coeff * mesh.areas / 12.0
        d = space.ldof_gdof[:, 2 * v:2 * v + 2]   # (nt, 2)
        for i in range(2):
            for j in range(2):
                rows.append(d[:, i])
                cols.append(d[:, j])
                vals.append(w * Gv[:, i, j])
    cd = space.ldof_gdof[:, 6:8]
    wc = coeff * mesh.areas * 0.75
    for i in range(2):
        rows.append(cd[:, i])
        cols.append(cd[:, i])
        vals.append(wc)
    A = sp.csr_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(space.n_dofs, space.n_dofs))
    A.sum_duplicates()
    return A


def build_local_blocks(space, A, B, free_mask):
    """Split the Gram matrix into its node blocks (vertex + centroid)."""
    mesh = space.mesh
    vertex_dofs = [[] for _ in range(mesh.n_vertices)]
    vertex_elems = [[] for _ in range(mesh.n_vertices)]
    for e in range(mesh.n_edges):
        a, b = mesh.edges[e]
        vertex_dofs[a].append(2 * e)
        vertex_dofs[b].append(2 * e + 1)
    for t in range(mesh.n_triangles):
        for v in mesh.triangles[t]:
            vertex_elems[v].append(t)

    Ad = A.tocsc()
    Bd = B.tocsr()
    blocks = []
    for v in range(mesh.n_vertices):
        dofs = np.array(sorted(vertex_dofs[v]), dtype=np.int64)
        elems = np.array(sorted(vertex_elems[v]), dtype=np.int64)
        wdofs = (3 * elems[:, None] + np.arange(3)[None, :]).ravel()
        Ablk = Ad[np.ix_(dofs, dofs)].toarray()
        Bblk = Bd[dofs][:, wdofs].toarray()
        blocks.append(LocalBlock(("vertex", v), dofs, Ablk,
                                 free_mask[dofs], wdofs, Bblk))
    for t in range(mesh.n_triangles):
        dofs = np.array([space.centroid_dof(t, 0), space.centroid_dof(t, 1)],
                        dtype=np.int64)
        wdofs = 3 * t + np.arange(3)
        Ablk = Ad[np.ix_(dofs, dofs)].toarray()
        Bblk = Bd[dofs][:, wdofs].toarray()
        blocks.append(LocalBlock(("centroid", t), dofs, Ablk,
                                 free_mask[dofs], wdofs, Bblk))
    return blocks


class SchurOperator:
    """Assembled, eliminated form of one half-step saddle system.

    Holds the cell-space Schur matrix S (sparse SPD), the sparse pieces
    needed to form right sides and recover fluxes, and an IC(0)-PCG solver
    state.  factor() must be called once before solve().
    """

    def __init__(self, space, coeff, mass_weight, essential_marker=None):
        mesh = space.mesh
        self.space = space
        self.coeff = coeff
        self.mass_weight = mass_weight
        self.essential_marker = essential_marker

        free = np.ones(space.n_dofs, dtype=bool)
        if essential_marker is not None:
            for e in mesh.boundary_edges(essential_marker):
                free[2 * e] = False
                free[2 * e + 1] = False
        self.free_mask = free
        all_boundary = np.concatenate([mesh.boundary_edges(DIRICHLET),
                                       mesh.boundary_edges(NEUMANN)])
        self._n_free_boundary = int(free[2 * all_boundary].sum())

        self.A = _global_gram(space, coeff)
        self.B = _global_B(space, _local_divergence_coupling(space))
        self.blocks = build_local_blocks(space, self.A, self.B, free)

        # Block-diagonal inverse of the free-free Gram part.
        rows, cols, vals = [], [], []
        for blk in self.blocks:
            nf = int(blk.free.sum())
            if nf == 0:
                continue
            fdofs = blk.dofs[blk.free]
            inv = scipy.linalg.cho_solve(blk.chol, np.eye(nf))
            inv = 0.5 * (inv + inv.T)
            r = np.repeat(fdofs, nf)
            c = np.tile(fdofs, nf)
            rows.append(r)
            cols.append(c)
            vals.append(inv.ravel())
        self.Ainv = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(space.n_dofs, space.n_dofs))

        nt = mesh.n_triangles
        if mass_weight != 0.0:
            Dblk = mass_weight * mesh.areas[:, None, None] * _P1_MASS[None, :, :]
            wd = 3 * np.arange(nt)[:, None] + np.arange(3)[None, :]
            r = np.repeat(wd, 3, axis=1).ravel()
            c = np.tile(wd, (1, 3)).ravel()
            self.D = sp.csr_matrix((Dblk.ravel(), (r, c)),
                                   shape=(space.n_wdofs, space.n_wdofs))
        else:
            self.D = sp.csr_matrix((space.n_wdofs, space.n_wdofs))

        self.S = (self.B.T @ (self.Ainv @ self.B) + self.D).tocsr()
        self.S.sum_duplicates()
        self.preconditioner = None

    @property
    def singular(self):
        """True when D vanishes and every boundary edge is constrained: no
        natural-boundary DOF remains to pin the constant, so the Schur
        matrix has the constant vector in its kernel."""
        return self.mass_weight == 0.0 and self._n_free_boundary == 0

    def factor(self):
        self.preconditioner = IncompleteCholesky(self.S)
        return self

    def reduce(self, G, constrained_values, rhs_w0):
        """Right side of the Schur system for given data.

        G: flux-equation load (length n_dofs; constrained rows ignored).
        constrained_values: essential flux data (zero at free DOFs).
        rhs_w0: cell-equation load (length n_wdofs).
        Returns (rhs, y) with y the partial flux A_ff^{-1}(G_f - A_fc c).
        """
        y = self.Ainv @ (G - self.A @ constrained_values)
        rhs = rhs_w0 - self.B.T @ (y + constrained_values)
        return rhs, y

    def back_substitute(self, U, y, constrained_values):
        """Recover the eliminated flux from the cell solution."""
        return y + constrained_values + self.Ainv @ (self.B @ U)

    def solve(self, G, constrained_values, rhs_w0, rel_tol=1e-10, x0=None,
              max_iter=None):
        """Solve the half-step system; returns (U, flux, PcgResult)."""
        if self.preconditioner is None:
            self.factor()
        rhs, y = self.reduce(G, constrained_values, rhs_w0)
        res = pcg(self.S, rhs, self.preconditioner, rel_tol=rel_tol,
                  x0=x0, max_iter=max_iter, deflate_constants=self.singular)
        flux = self.back_substitute(res.x, y, constrained_values)
        return res.x, flux, res


def build_schur(space, coeff, mass_weight, essential_marker=None):
    return SchurOperator(space, coeff, mass_weight, essential_marker)
