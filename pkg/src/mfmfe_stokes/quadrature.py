"""Quadrature rules on reference triangles and edges.

Three triangle rules are used throughout:

* ``NODAL4``: vertices + centroid with weights 1/12, 1/12, 1/12, 3/4.  This is
  the rule that localizes flux coupling in the mixed method (it only sees
  degree-of-freedom nodes) and it is exact for quadratics.
* ``MIDPOINT3``: edge midpoints, weights 1/3.  Exact for quadratics; used for
  all piecewise-polynomial integrals on the pressure side.
* ``DEGREE5``: the 7-point rule, exact through degree 5; used for smooth data
  (projections, forcing, error norms) and for quartic integrands such as
  squared flux norms.

All weights are relative to element area: ``integral ~ |E| * sum(w_i f_i)``.
Edge rules use Gauss-Legendre points mapped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TriangleRule:
    points: np.ndarray   # (n, 2) reference coordinates
    weights: np.ndarray  # (n,), sums to 1


NODAL4 = TriangleRule(
    points=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0],
                     [1.0 / 3.0, 1.0 / 3.0]]),
    weights=np.array([1.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0, 3.0 / 4.0]),
)

MIDPOINT3 = TriangleRule(
    points=np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]),
    weights=np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
)

_A1, _B1, _W1 = 0.0597158717897698, 0.4701420641051151, 0.1323941527885062
_A2, _B2, _W2 = 0.7974269853530873, 0.1012865073234563, 0.1259391805448271
DEGREE5 = TriangleRule(
    points=np.array([
        [1.0 / 3.0, 1.0 / 3.0],
        [_A1, _B1], [_B1, _A1], [_B1, _B1],
        [_A2, _B2], [_B2, _A2], [_B2, _B2],
    ]),
    weights=np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2]),
)


def physical_points(mesh, rule, tids=None):
    """Map rule points to physical space for the given (default all) elements.

    Returns an array of shape (len(tids), npoints, 2).
    """
    if tids is None:
        tids = np.arange(mesh.n_triangles)
    p0 = mesh.vertices[mesh.triangles[tids, 0]]
    jac = mesh.jac[tids]
    return p0[:, None, :] + np.einsum("tij,pj->tpi", jac, rule.points)


def tri_integrate(mesh, tid, f, rule=MIDPOINT3):
    """Integrate a scalar callable f(x, y) over one element."""
    pts = physical_points(mesh, rule, np.array([tid]))[0]
    vals = np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float)
    return mesh.areas[tid] * float(np.dot(rule.weights, vals))


def quad_q(mesh, tid, f, g):
    """Nodal-rule inner product (f, g)_{Q,E} of two vector callables.

    f and g take (x, y) arrays and return arrays of shape (n, 2).
    """
    pts = physical_points(mesh, NODAL4, np.array([tid]))[0]
    fv = np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float).reshape(len(pts), 2)
    gv = np.asarray(g(pts[:, 0], pts[:, 1]), dtype=float).reshape(len(pts), 2)
    return mesh.areas[tid] * float(np.dot(NODAL4.weights, np.sum(fv * gv, axis=1)))


def edge_rule(npts):
    """Gauss-Legendre nodes/weights on [0, 1]; weights sum to 1."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def edge_points(mesh, eid, npts=3):
    """Physical Gauss points along edge eid, plus the parameter values."""
    s, _ = edge_rule(npts)
    a = mesh.vertices[mesh.edges[eid, 0]]
    b = mesh.vertices[mesh.edges[eid, 1]]
    return a[None, :] + s[:, None] * (b - a)[None, :], s


def edge_integrate(mesh, eid, f, npts=3):
    """Integrate a scalar callable f(x, y) along one edge."""
    s, w = edge_rule(npts)
    a = mesh.vertices[mesh.edges[eid, 0]]
    b = mesh.vertices[mesh.edges[eid, 1]]
    pts = a[None, :] + s[:, None] * (b - a)[None, :]
    vals = np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float)
    return mesh.edge_lengths[eid] * float(np.dot(w, vals))
