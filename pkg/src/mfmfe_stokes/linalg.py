"""Sparse symmetric solvers: zero-fill incomplete Cholesky and PCG.

The Schur systems produced by the flux elimination are sparse SPD (or
positive semidefinite with a known constant kernel when no stress boundary
is present).  They are solved with preconditioned conjugate gradients using
an IC(0) factorization computed once per matrix.  The factorization kernels
run over raw CSR arrays under numba.

If a pivot goes nonpositive during factorization (possible for the
semidefinite case), the attempt is retried with a diagonal shift
max(1e-12, 1e-3 * mean diagonal), doubling up to 8 times.
"""

from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse as sp
from numba import njit


class FactorizationError(RuntimeError):
    """IC(0) could not complete even with the maximum diagonal shift."""


@njit(cache=True)
def _ic0_kernel(n, indptr, indices, data, diag_shift):
    """In-place IC(0) on the lower triangle stored in CSR (sorted columns).

    data holds the lower-triangular entries of A (including diagonal) and is
    overwritten with L such that L L^T ~ A on the sparsity pattern.
    Returns the row where a nonpositive pivot stopped the factorization,
    or -1 on success.
    """
    for i in range(n):
        # data range for row i; last entry is the diagonal.
        start = indptr[i]
        end = indptr[i + 1]
        dpos = end - 1
        data[dpos] += diag_shift
        for idx in range(start, end - 1):
            j = indices[idx]
            # a_ij minus sum_k<j L_ik L_jk
            s = data[idx]
            ia = start
            ja = indptr[j]
            jend = indptr[j + 1] - 1  # exclude diagonal of row j
            while ia < idx and ja < jend:
                ci = indices[ia]
                cj = indices[ja]
                if ci == cj:
                    s -= data[ia] * data[ja]
                    ia += 1
                    ja += 1
                elif ci < cj:
                    ia += 1
                else:
                    ja += 1
            Ljj = data[indptr[j + 1] - 1]
            data[idx] = s / Ljj
        s = data[dpos]
        for idx in range(start, end - 1):
            s -= data[idx] * data[idx]
        if s <= 0.0:
            return i
        data[dpos] = np.sqrt(s)
    return -1


@njit(cache=True)
def _lower_solve(n, indptr, indices, data, b, x):
    """Solve L x = b with L lower-triangular CSR, diagonal last per row."""
    for i in range(n):
        s = b[i]
        for idx in range(indptr[i], indptr[i + 1] - 1):
            s -= data[idx] * x[indices[idx]]
        x[i] = s / data[indptr[i + 1] - 1]


@njit(cache=True)
def _upper_solve_from_lower(n, indptr, indices, data, b, x):
    """Solve L^T x = b using the CSR storage of L (column sweeps)."""
    for i in range(n):
        x[i] = b[i]
    for i in range(n - 1, -1, -1):
        x[i] /= data[indptr[i + 1] - 1]
        xi = x[i]
        for idx in range(indptr[i], indptr[i + 1] - 1):
            x[indices[idx]] -= data[idx] * xi


class IncompleteCholesky:
    """IC(0) preconditioner for a sparse SPD matrix.

    Attributes: shift (the diagonal shift that succeeded, 0.0 normally)
    and attempts (number of factorizations tried).
    """

    def __init__(self, A):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        lower = sp.tril(A, format="csr")
        lower.sort_indices()
        base = max(1e-12, 1e-3 * float(A.diagonal().mean()))
        shift = 0.0
        self.attempts = 0
        for k in range(9):
            data = lower.data.copy()
            self.attempts += 1
            bad = _ic0_kernel(n, lower.indptr, lower.indices, data, shift)
            if bad < 0:
                self.n = n
                self.indptr = lower.indptr
                self.indices = lower.indices
                self.data = data
                self.shift = shift
                return
            shift = base * (2.0 ** k)
        raise FactorizationError(
            "IC(0) failed after %d shifted attempts" % self.attempts)

    def solve(self, r):
        """Apply the preconditioner: return (L L^T)^{-1} r."""
        y = np.empty_like(r)
        z = np.empty_like(r)
        _lower_solve(self.n, self.indptr, self.indices, self.data, r, y)
        _upper_solve_from_lower(self.n, self.indptr, self.indices, self.data, y, z)
        return z


class PcgResult:
    def __init__(self, x, converged, iterations, relative_residual):
        self.x = x
        self.converged = converged
        self.iterations = iterations
        self.relative_residual = relative_residual


def pcg(A, b, preconditioner=None, rel_tol=1e-10, max_iter=None, x0=None,
        deflate_constants=False):
    """Preconditioned conjugate gradients for SPD systems.

    Convergence criterion: ||b - A x|| <= rel_tol * ||b||.  Returns the best
    iterate with a converged flag rather than raising on stagnation.

    deflate_constants removes the all-ones component from the right side,
    the iterates, and every preconditioned residual; use it when A is
    positive semidefinite with the constant vector spanning its kernel.
    """
    n = A.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    b = np.asarray(b, dtype=float)

    def deflate(v):
        if deflate_constants:
            return v - v.mean()
        return v

    b = deflate(b.copy())
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return PcgResult(np.zeros(n), True, 0, 0.0)

    x = np.zeros(n) if x0 is None else deflate(np.asarray(x0, dtype=float).copy())
    r = b - A @ x
    r = deflate(r)
    z = r.copy() if preconditioner is None else deflate(preconditioner.solve(r))
    p = z.copy()
    rz = float(r @ z)
    best_x = x.copy()
    best_res = np.linalg.norm(r)

    it = 0
    while it < max_iter:
        res = np.linalg.norm(r)
        if res < best_res:
            best_res = res
            best_x = x.copy()
        if res <= rel_tol * bnorm:
            return PcgResult(x, True, it, res / bnorm)
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break  # breakdown: not SPD along p (or kernel hit)
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        z = r.copy() if preconditioner is None else deflate(preconditioner.solve(r))
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
        it += 1

    res = np.linalg.norm(r)
    if res < best_res:
        best_res, best_x = res, x.copy()
    return PcgResult(best_x, best_res <= rel_tol * bnorm, it, best_res / bnorm)


def write_matrix_market(A, path, comment=""):
    """Export a sparse matrix in Matrix Market coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)
