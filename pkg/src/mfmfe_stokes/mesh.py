"""Conforming triangular meshes with oriented edges and boundary markers.

A mesh is built from vertex coordinates and triangle connectivity.  Triangles
are stored counterclockwise (input order is repaired if needed).  Every edge
gets a global unit normal: for interior edges it points from the adjacent
element with the smaller index to the one with the larger index, for boundary
edges it points outward.  Boundary edges carry a marker, either ``dirichlet``
(velocity data) or ``neumann`` (stress data).

Mesh text format (plain ASCII, ``#`` comments allowed)::

    vertices <nv>
    x y                  (nv lines)
    triangles <nt>
    i j k                (nt lines, 0-based)
    boundary <nb>
    a b dirichlet|neumann   (nb lines, one per boundary edge)

Instances are treated as immutable after construction; refinement and
perturbation return new meshes.
"""

from __future__ import annotations

import numpy as np

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

_MARKER_NAMES = {DIRICHLET: "dirichlet", NEUMANN: "neumann"}
_MARKER_CODES = {v: k for k, v in _MARKER_NAMES.items()}

# Aspect ratio normalization: equilateral triangle scores exactly 1.
_AR_NORM = 2.0 / np.sqrt(3.0)


class MeshError(ValueError):
    """Invalid mesh input: bad indices, non-conforming edges, degeneracy."""


class Mesh:
    """Triangle mesh with edge orientation data used by the mixed spaces.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    edges : (ne, 2) int array, endpoint indices with edges[i, 0] < edges[i, 1]
    edge_elems : (ne, 2) int array, adjacent element indices (second is -1
        on the boundary); first is the smaller index
    edge_normals : (ne, 2) float array, global unit normal per edge
    edge_markers : (ne,) int array, INTERIOR / DIRICHLET / NEUMANN
    elem_edges : (nt, 3) int array, global edge index of local edge l,
        where local edge l joins local vertices l and (l+1) % 3
    elem_edge_signs : (nt, 3) int array, +1 where the global normal is the
        element's outward normal, -1 otherwise
    """

    def __init__(self, vertices, triangles, boundary_spec):
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must be an (nt, 3) array")
        nv = len(vertices)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= nv):
            raise MeshError("triangle vertex index out of range")
        referenced = np.zeros(nv, dtype=bool)
        referenced[triangles.ravel()] = True
        if not referenced.all():
            raise MeshError("dangling vertex: %d is not part of any triangle"
                            % int(np.nonzero(~referenced)[0][0]))

        # Repair orientation, reject degenerate triangles.
        p0 = vertices[triangles[:, 0]]
        p1 = vertices[triangles[:, 1]]
        p2 = vertices[triangles[:, 2]]
        twice_area = ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                      - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))
        bbox = vertices.max(axis=0) - vertices.min(axis=0)
        bbox_area = max(bbox[0] * bbox[1], np.finfo(float).tiny)
        if np.any(np.abs(twice_area) < 2e-14 * bbox_area):
            bad = int(np.argmin(np.abs(twice_area)))
            raise MeshError("degenerate triangle %d (area below threshold)" % bad)
        flip = twice_area < 0
        triangles = triangles.copy()
        triangles[flip] = triangles[flip][:, [0, 2, 1]]
        twice_area = np.abs(twice_area)

        self.vertices = vertices
        self.triangles = triangles
        self.areas = 0.5 * twice_area

        self._build_edges()
        self._mark_boundary(boundary_spec)
        self._build_geometry()

    # -- construction helpers -------------------------------------------------

    def _build_edges(self):
        tris = self.triangles
        nt = len(tris)
        # Local edge l of element E joins local vertices l and l+1 (mod 3).
        a = tris
        b = tris[:, [1, 2, 0]]
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        keys = np.stack([lo.ravel(), hi.ravel()], axis=1)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        ne = len(uniq)
        self.edges = uniq
        self.elem_edges = inverse.reshape(nt, 3).astype(np.int64)

        counts = np.bincount(inverse, minlength=ne)
        if counts.max() > 2:
            raise MeshError("non-conforming mesh: edge shared by >2 triangles")

        edge_elems = np.full((ne, 2), -1, dtype=np.int64)
        elem_ids = np.repeat(np.arange(nt), 3)
        # Fill adjacency in ascending element order so slot 0 is the smaller.
        for eid, tid in zip(inverse, elem_ids):
            if edge_elems[eid, 0] < 0:
                edge_elems[eid, 0] = tid
            elif edge_elems[eid, 1] < 0:
                lo_t = min(edge_elems[eid, 0], tid)
                hi_t = max(edge_elems[eid, 0], tid)
                edge_elems[eid, 0] = lo_t
                edge_elems[eid, 1] = hi_t
        self.edge_elems = edge_elems
        self._boundary_mask = counts == 1

        # Hanging-node heuristic: single-element edges must chain into closed
        # loops, so each touched vertex sees exactly two of them.
        bdeg = np.zeros(len(self.vertices), dtype=np.int64)
        for e in np.nonzero(self._boundary_mask)[0]:
            bdeg[self.edges[e, 0]] += 1
            bdeg[self.edges[e, 1]] += 1
        touched = bdeg > 0
        if np.any(bdeg[touched] != 2):
            raise MeshError("non-conforming mesh: hanging node on the boundary loop")

    def _outward_normal(self, tid, a, b):
        # a -> b traversed counterclockwise within triangle tid.
        t = self.vertices[b] - self.vertices[a]
        n = np.array([t[1], -t[0]])
        return n / np.linalg.norm(n)

    def _mark_boundary(self, boundary_spec):
        ne = len(self.edges)
        markers = np.full(ne, INTERIOR, dtype=np.int64)
        boundary_ids = np.nonzero(self._boundary_mask)[0]
        if callable(boundary_spec):
            mids = 0.5 * (self.vertices[self.edges[boundary_ids, 0]]
                          + self.vertices[self.edges[boundary_ids, 1]])
            for e, (mx, my) in zip(boundary_ids, mids):
                m = boundary_spec(mx, my)
                code = _MARKER_CODES.get(m, m)
                if code not in (DIRICHLET, NEUMANN):
                    raise MeshError("unmarked boundary edge %d (marker %r)" % (e, m))
                markers[e] = code
        elif isinstance(boundary_spec, str):
            code = _MARKER_CODES.get(boundary_spec)
            if code is None:
                raise MeshError("unknown boundary marker %r" % boundary_spec)
            markers[boundary_ids] = code
        elif isinstance(boundary_spec, dict):
            for e in boundary_ids:
                key = (int(self.edges[e, 0]), int(self.edges[e, 1]))
                m = boundary_spec.get(key)
                code = _MARKER_CODES.get(m, m)
                if code not in (DIRICHLET, NEUMANN):
                    raise MeshError("unmarked boundary edge %d" % e)
                markers[e] = code
        else:
            raise MeshError("boundary_spec must be a callable, marker name, or dict")
        self.edge_markers = markers

    def _build_geometry(self):
        verts = self.vertices
        tris = self.triangles
        nt = len(tris)
        ne = len(self.edges)

        ev = verts[self.edges[:, 1]] - verts[self.edges[:, 0]]
        self.edge_lengths = np.linalg.norm(ev, axis=1)

        # Global normals: outward normal of the first adjacent element.
        normals = np.empty((ne, 2))
        signs = np.zeros((nt, 3), dtype=np.int64)
        for tid in range(nt):
            for l in range(3):
                e = self.elem_edges[tid, l]
                a = tris[tid, l]
                b = tris[tid, (l + 1) % 3]
                if self.edge_elems[e, 0] == tid:
                    normals[e] = self._outward_normal(tid, a, b)
        for tid in range(nt):
            for l in range(3):
                e = self.elem_edges[tid, l]
                signs[tid, l] = 1 if self.edge_elems[e, 0] == tid else -1
        self.edge_normals = normals
        self.elem_edge_signs = signs

        # Affine map data: F(xhat) = v0 + J xhat, det J = 2 |E|.
        p0 = verts[tris[:, 0]]
        p1 = verts[tris[:, 1]]
        p2 = verts[tris[:, 2]]
        jac = np.empty((nt, 2, 2))
        jac[:, :, 0] = p1 - p0
        jac[:, :, 1] = p2 - p0
        self.jac = jac
        self.jac_det = 2.0 * self.areas
        self.centroids = (p0 + p1 + p2) / 3.0

        side = np.empty((nt, 3))
        side[:, 0] = np.linalg.norm(p1 - p0, axis=1)
        side[:, 1] = np.linalg.norm(p2 - p1, axis=1)
        side[:, 2] = np.linalg.norm(p0 - p2, axis=1)
        self._max_side = side.max(axis=1)

    # -- queries --------------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def h(self):
        """Mesh size: largest triangle diameter."""
        return float(self._max_side.max())

    @property
    def domain_area(self):
        return float(self.areas.sum())

    def boundary_edges(self, marker=None):
        """Edge indices on the boundary, optionally filtered by marker."""
        if marker is None:
            return np.nonzero(self.edge_markers != INTERIOR)[0]
        return np.nonzero(self.edge_markers == marker)[0]

    def aspect_ratios(self):
        """Per-element ratio (min altitude / max side) * 2/sqrt(3), in (0, 1]."""
        # The smallest altitude belongs to the longest side: h_min = 2|E|/L_max.
        h_min = 2.0 * self.areas / self._max_side
        return _AR_NORM * h_min / self._max_side

    def aspect_ratio_histogram(self, nbins=19):
        """Histogram of aspect ratios over equal sub-intervals of [0, 1]."""
        counts, edges = np.histogram(self.aspect_ratios(), bins=nbins, range=(0.0, 1.0))
        return counts, edges

    def boundary_marker_map(self):
        """Dict {(a, b): marker name} for every boundary edge."""
        out = {}
        for e in self.boundary_edges():
            key = (int(self.edges[e, 0]), int(self.edges[e, 1]))
            out[key] = _MARKER_NAMES[int(self.edge_markers[e])]
        return out


def build_mesh(vertices, triangles, boundary_spec):
    """Build a mesh; boundary_spec is a callable (x, y) -> marker at edge
    midpoints, a single marker name, or a dict keyed by sorted vertex pairs."""
    return Mesh(vertices, triangles, boundary_spec)


def structured_square(n, lo=(0.0, 0.0), hi=(1.0, 1.0), boundary_spec="dirichlet",
                      pattern="right"):
    """Structured triangulation of a rectangle.

    pattern="right": each of the n*n cells is split along the same diagonal
    (2 n^2 triangles).  pattern="crisscross": each cell is split into four
    triangles about its center (4 n^2 triangles); this mesh is mirror
    symmetric in both axes, which matters for symmetry checks.
    """
    if n < 1:
        raise MeshError("n must be >= 1")
    x = np.linspace(lo[0], hi[0], n + 1)
    y = np.linspace(lo[1], hi[1], n + 1)
    xg, yg = np.meshgrid(x, y, indexing="ij")
    verts = np.stack([xg.ravel(), yg.ravel()], axis=1)

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    if pattern == "right":
        for i in range(n):
            for j in range(n):
                v00, v10 = vid(i, j), vid(i + 1, j)
                v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
    elif pattern == "crisscross":
        centers = []
        for i in range(n):
            for j in range(n):
                cx = 0.5 * (x[i] + x[i + 1])
                cy = 0.5 * (y[j] + y[j + 1])
                centers.append((cx, cy))
        centers = np.array(centers)
        base = len(verts)
        verts = np.concatenate([verts, centers], axis=0)
        for i in range(n):
            for j in range(n):
                c = base + i * n + j
                v00, v10 = vid(i, j), vid(i + 1, j)
                v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
                tris.append((v00, v10, c))
                tris.append((v10, v11, c))
                tris.append((v11, v01, c))
                tris.append((v01, v00, c))
    else:
        raise MeshError("unknown pattern %r" % pattern)
    return Mesh(verts, np.array(tris, dtype=np.int64), boundary_spec)


def uniform_refine(mesh):
    """Split every triangle into four via edge midpoints; markers inherited."""
    verts = mesh.vertices
    nv = len(verts)
    mid_index = {}
    new_verts = [verts]
    next_id = nv
    mids = 0.5 * (verts[mesh.edges[:, 0]] + verts[mesh.edges[:, 1]])
    for e in range(mesh.n_edges):
        mid_index[e] = next_id
        next_id += 1
    new_verts.append(mids)
    all_verts = np.concatenate(new_verts, axis=0)

    tris = []
    for tid in range(mesh.n_triangles):
        v0, v1, v2 = mesh.triangles[tid]
        m01 = mid_index[mesh.elem_edges[tid, 0]]
        m12 = mid_index[mesh.elem_edges[tid, 1]]
        m20 = mid_index[mesh.elem_edges[tid, 2]]
        tris.append((v0, m01, m20))
        tris.append((m01, v1, m12))
        tris.append((m20, m12, v2))
        tris.append((m01, m12, m20))

    marker_map = {}
    for e in mesh.boundary_edges():
        a, b = int(mesh.edges[e, 0]), int(mesh.edges[e, 1])
        m = _MARKER_NAMES[int(mesh.edge_markers[e])]
        mid = mid_index[e]
        marker_map[(min(a, mid), max(a, mid))] = m
        marker_map[(min(b, mid), max(b, mid))] = m
    return Mesh(all_verts, np.array(tris, dtype=np.int64), marker_map)


def perturb_mesh(mesh, magnitude, seed):
    """Randomly displace interior vertices; deterministic in (mesh, seed).

    Each interior vertex moves by ``magnitude`` times its shortest incident
    edge length in a uniformly random direction, with the displacement halved
    (up to 10 times) until every incident triangle keeps positive area.
    Boundary vertices and markers are untouched.  magnitude must be < 0.5.
    """
    if not 0.0 <= magnitude < 0.5:
        raise MeshError("perturbation magnitude must be in [0, 0.5)")
    if magnitude == 0.0:
        return Mesh(mesh.vertices.copy(), mesh.triangles.copy(),
                    mesh.boundary_marker_map())

    rng = np.random.default_rng(seed)
    verts = mesh.vertices.copy()
    on_boundary = np.zeros(mesh.n_vertices, dtype=bool)
    for e in mesh.boundary_edges():
        on_boundary[mesh.edges[e, 0]] = True
        on_boundary[mesh.edges[e, 1]] = True

    min_edge = np.full(mesh.n_vertices, np.inf)
    for e in range(mesh.n_edges):
        a, b = mesh.edges[e]
        L = mesh.edge_lengths[e]
        min_edge[a] = min(min_edge[a], L)
        min_edge[b] = min(min_edge[b], L)

    vertex_tris = [[] for _ in range(mesh.n_vertices)]
    for tid in range(mesh.n_triangles):
        for v in mesh.triangles[tid]:
            vertex_tris[v].append(tid)

    def areas_ok(v, pos):
        for tid in vertex_tris[v]:
            tri = mesh.triangles[tid]
            pts = [pos if tv == v else verts[tv] for tv in tri]
            twice = ((pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1])
                     - (pts[1][1] - pts[0][1]) * (pts[2][0] - pts[0][0]))
            if twice <= 1e-12 * mesh.jac_det[tid]:
                return False
        return True

    for v in range(mesh.n_vertices):
        if on_boundary[v]:
            continue
        theta = rng.uniform(0.0, 2.0 * np.pi)
        r = magnitude * min_edge[v] * np.sqrt(rng.uniform())
        d = np.array([np.cos(theta), np.sin(theta)]) * r
        for _ in range(10):
            pos = verts[v] + d
            if areas_ok(v, pos):
                verts[v] = pos
                break
            d *= 0.5
        # If every shrink failed the vertex simply stays put.
    return Mesh(verts, mesh.triangles.copy(), mesh.boundary_marker_map())


def read_mesh(path):
    """Read a mesh from the plain-text format described in the module docs."""
    tokens = []
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.append(line.split())
    it = iter(tokens)

    def expect(section):
        row = next(it, None)
        if row is None or row[0] != section:
            raise MeshError("mesh file: expected '%s' section" % section)
        return int(row[1])

    try:
        nv = expect("vertices")
        verts = np.array([[float(c) for c in next(it)] for _ in range(nv)])
        nt = expect("triangles")
        tris = np.array([[int(c) for c in next(it)] for _ in range(nt)], dtype=np.int64)
        nb = expect("boundary")
        markers = {}
        for _ in range(nb):
            a, b, name = next(it)
            a, b = int(a), int(b)
            markers[(min(a, b), max(a, b))] = name
    except (StopIteration, ValueError, IndexError) as exc:
        raise MeshError("malformed mesh file %s: %s" % (path, exc)) from exc
    return Mesh(verts, tris, markers)


def write_mesh(mesh, path):
    """Write a mesh in the plain-text format (round-trips with read_mesh)."""
    with open(path, "w") as f:
        f.write("vertices %d\n" % mesh.n_vertices)
        for x, y in mesh.vertices:
            f.write("%.17g %.17g\n" % (x, y))
        f.write("triangles %d\n" % mesh.n_triangles)
        for a, b, c in mesh.triangles:
            f.write("%d %d %d\n" % (a, b, c))
        bedges = mesh.boundary_edges()
        f.write("boundary %d\n" % len(bedges))
        for e in bedges:
            a, b = mesh.edges[e]
            f.write("%d %d %s\n" % (a, b, _MARKER_NAMES[int(mesh.edge_markers[e])]))


def mesh_statistics(mesh, nbins=19):
    """Summary counts plus the aspect-ratio histogram, as plain dict/arrays."""
    counts, bin_edges = mesh.aspect_ratio_histogram(nbins)
    summary = {
        "triangles": mesh.n_triangles,
        "vertices": mesh.n_vertices,
        "edges": mesh.n_edges,
        "h": mesh.h,
        "min_aspect_ratio": float(mesh.aspect_ratios().min()),
        "max_aspect_ratio": float(mesh.aspect_ratios().max()),
    }
    return summary, counts, bin_edges
