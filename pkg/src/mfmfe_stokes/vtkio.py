"""Legacy ASCII VTK export of elementwise-linear fields.

The discrete fields are linear on each triangle but discontinuous across
edges (the pressure always, the predicted velocity too), so every triangle
gets its own three points: cell t owns points 3t, 3t+1, 3t+2.  Readers
render the same geometry, and per-element point data survives without
cross-edge averaging.  Legacy ASCII (DataFile Version 2.0) keeps the writer
dependency free and readable by every VTK-aware tool.
"""

from __future__ import annotations

import numpy as np

VTK_TRIANGLE = 5


def _fmt(x):
    # shortest round-trippable float text keeps files small and deterministic
    return np.format_float_scientific(x, precision=12, trim="-")


def write_vtk(path, mesh, scalars=None, vectors=None, title="snapshot"):
    """Write a triangulated snapshot with per-cell duplicated points.

    ``scalars`` and ``vectors`` map field names to arrays of vertex values,
    shaped (n_triangles, 3) and (n_triangles, 3, 2) respectively — the same
    layout as P1Field.values / P1VectorField.values.
    """
    scalars = scalars or {}
    vectors = vectors or {}
    nt = mesh.n_triangles
    pts = mesh.vertices[mesh.triangles]            # (nt, 3, 2)
    for name, arr in scalars.items():
        if np.shape(arr) != (nt, 3):
            raise ValueError(f"scalar field {name!r}: expected shape {(nt, 3)}")
    for name, arr in vectors.items():
        if np.shape(arr) != (nt, 3, 2):
            raise ValueError(f"vector field {name!r}: expected shape {(nt, 3, 2)}")

    lines = ["# vtk DataFile Version 2.0", str(title).splitlines()[0] if title else "snapshot",
             "ASCII", "DATASET UNSTRUCTURED_GRID", f"POINTS {3 * nt} double"]
    flat = pts.reshape(-1, 2)
    lines.extend(f"{_fmt(p[0])} {_fmt(p[1])} 0" for p in flat)
    lines.append(f"CELLS {nt} {4 * nt}")
    lines.extend(f"3 {3 * t} {3 * t + 1} {3 * t + 2}" for t in range(nt))
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(str(VTK_TRIANGLE) for _ in range(nt))

    if scalars or vectors:
        lines.append(f"POINT_DATA {3 * nt}")
    for name in sorted(scalars):
        vals = np.asarray(scalars[name], dtype=float).ravel()
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in vals)
    for name in sorted(vectors):
        vals = np.asarray(vectors[name], dtype=float).reshape(-1, 2)
        lines.append(f"VECTORS {name} double")
        lines.extend(f"{_fmt(v[0])} {_fmt(v[1])} 0" for v in vals)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def write_state(path, state, title=None):
    """Snapshot a solver state: divergence-free velocity plus pressure."""
    mesh = state.psi.mesh
    vel = state.u.node_values()[:, :3, :]
    if title is None:
        title = f"fields at t={state.t:.6g}"
    return write_vtk(path, mesh, scalars={"pressure": state.psi.values},
                     vectors={"velocity": vel}, title=title)


def read_vtk(path):
    """Parse a file written by write_vtk (points, cells, point data).

    Only the subset of the legacy format emitted here is supported; used by
    tests and good enough for quick post-processing.
    """
    with open(path) as fh:
        tokens = fh.read().split("\n")
    if not tokens[0].startswith("# vtk DataFile Version"):
        raise ValueError("not a legacy VTK file")
    if tokens[2] != "ASCII":
        raise ValueError("only ASCII files are supported")
    i = tokens.index(next(t for t in tokens if t.startswith("POINTS")))
    npts = int(tokens[i].split()[1])
    pts = np.array([tokens[i + 1 + k].split() for k in range(npts)], dtype=float)
    i = i + 1 + npts
    ncells = int(tokens[i].split()[1])
    cells = np.array([tokens[i + 1 + k].split()[1:] for k in range(ncells)],
                     dtype=np.int64)
    i = i + 1 + ncells
    assert tokens[i].startswith("CELL_TYPES")
    types = np.array(tokens[i + 1:i + 1 + ncells], dtype=np.int64)
    i += 1 + ncells
    scalars, vectors = {}, {}
    while i < len(tokens):
        line = tokens[i]
        if line.startswith("POINT_DATA"):
            assert int(line.split()[1]) == npts
            i += 1
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            assert tokens[i + 1] == "LOOKUP_TABLE default"
            scalars[name] = np.array(tokens[i + 2:i + 2 + npts], dtype=float)
            i += 2 + npts
        elif line.startswith("VECTORS"):
            name = line.split()[1]
            vectors[name] = np.array(
                [tokens[i + 1 + k].split() for k in range(npts)], dtype=float)
            i += 1 + npts
        elif line == "":
            i += 1
        else:
            raise ValueError(f"unexpected section: {line!r}")
    return {"points": pts, "cells": cells, "cell_types": types,
            "scalars": scalars, "vectors": vectors}
