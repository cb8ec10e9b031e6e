"""Run artifacts: delimited tables with matplotlib figures rendered next to
them.

Every report function takes an output directory and a stem and writes
<stem>*.csv plus <stem>*.png side by side.  CSV content is deterministic
for a fixed run; figures are presentation-only companions.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .mesh import mesh_statistics


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return path


# -- convergence ---------------------------------------------------------------

def convergence_report(table, out_dir, stem="convergence"):
    """Error/rate table as CSV plus a log-log error plot with a slope guide."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    table.write_csv(csv_path)

    sizes = np.asarray(table.sizes, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for var, marker in (("psi", "o"), ("ux", "s"), ("uy", "^")):
        ax.loglog(sizes, table.errors[var], marker=marker, label=f"L2 {var}")
    slope = 2.0 if table.mode == "space" else 1.0
    ref = np.asarray(table.errors["psi"], dtype=float)
    guide = ref[0] * (sizes / sizes[0]) ** slope
    ax.loglog(sizes, guide, "k--", linewidth=0.8, label=f"slope {slope:g}")
    ax.set_xlabel("h" if table.mode == "space" else "dt")
    ax.set_ylabel("max-in-time L2 error")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    png_path = os.path.join(out_dir, f"{stem}.png")
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return csv_path, png_path


# -- cavity --------------------------------------------------------------------

def cavity_report(result, out_dir, stem="cavity"):
    """Midline profile CSV plus the two-panel profile figure."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}_profiles.csv")
    result.write_csv(csv_path)

    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.6))
    v = result.profiles["vertical"]
    axes[0].plot(v["ux"], v["coord"], "-o", markersize=3)
    axes[0].set_xlabel("u_x(0.5, y)")
    axes[0].set_ylabel("y")
    h = result.profiles["horizontal"]
    axes[1].plot(h["coord"], h["uy"], "-o", markersize=3)
    axes[1].set_xlabel("x")
    axes[1].set_ylabel("u_y(x, 0.5)")
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.suptitle(f"cavity midlines, bottom wall s={result.s:g}", fontsize=10)
    fig.tight_layout()
    png_path = os.path.join(out_dir, f"{stem}_profiles.png")
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return csv_path, png_path


# -- time stepping diagnostics -------------------------------------------------

LEDGER_COLUMNS = ("step", "time", "dissipation", "kinetic", "drift",
                  "gradient", "lhs", "rhs", "ok")
DIAG_COLUMNS = ("step", "time", "max_divergence", "divergence_ratio",
                "q_orthogonality")


def _dict_rows(records, columns):
    rows = [list(columns)]
    for r in records:
        rows.append([r[c] if c in ("step", "ok") else f"{r[c]:.10e}"
                     for c in columns])
    return rows


def stability_report(solver, out_dir, stem="run"):
    """Energy-ledger and per-step diagnostic CSVs plus the decay figure."""
    os.makedirs(out_dir, exist_ok=True)
    ledger_path = write_rows(os.path.join(out_dir, f"{stem}_ledger.csv"),
                             _dict_rows(solver.ledger.rows, LEDGER_COLUMNS))
    diag_path = write_rows(os.path.join(out_dir, f"{stem}_diagnostics.csv"),
                           _dict_rows(solver.diagnostics, DIAG_COLUMNS))

    rows = solver.ledger.rows
    t = [r["time"] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.6))
    axes[0].plot(t, [r["lhs"] for r in rows], label="lhs")
    axes[0].plot(t, [r["rhs"] for r in rows], "k--", label="rhs")
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("energy balance")
    axes[0].legend(fontsize=8)
    axes[1].semilogy(t, np.maximum([r["kinetic"] for r in rows], 1e-300))
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("kinetic energy")
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    png_path = os.path.join(out_dir, f"{stem}_energy.png")
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return ledger_path, diag_path, png_path


# -- mesh ----------------------------------------------------------------------

def mesh_report(mesh, out_dir, stem="mesh"):
    """Mesh summary and aspect-ratio histogram, CSV plus bar chart."""
    os.makedirs(out_dir, exist_ok=True)
    summary, counts, edges = mesh_statistics(mesh)
    stats_path = write_rows(
        os.path.join(out_dir, f"{stem}_stats.csv"),
        [["quantity", "value"]] + [[k, v] for k, v in summary.items()])
    hist_rows = [["bin_lo", "bin_hi", "count"]]
    for i, c in enumerate(counts):
        hist_rows.append([f"{edges[i]:.6f}", f"{edges[i + 1]:.6f}", int(c)])
    hist_path = write_rows(os.path.join(out_dir, f"{stem}_aspect_hist.csv"),
                           hist_rows)

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    centers = 0.5 * (np.asarray(edges[:-1]) + np.asarray(edges[1:]))
    ax.bar(centers, counts, width=(edges[1] - edges[0]) * 0.9)
    ax.set_xlabel("aspect ratio (equilateral = 1)")
    ax.set_ylabel("triangles")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    png_path = os.path.join(out_dir, f"{stem}_aspect_hist.png")
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return stats_path, hist_path, png_path
