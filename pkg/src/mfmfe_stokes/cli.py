"""Command line front end: config parsing, experiment dispatch, artifacts.

Every dispatch writes its delimited tables, figures, and VTK output under
--out, plus a manifest.json recording the config echo, library versions,
phase timings, and, on failure, the reason; the manifest is written even
when the run fails and the process exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import verification as verif
from .config import ConfigError, parse_config
from .mesh import read_mesh, structured_square, perturb_mesh
from .report import (cavity_report, convergence_report, mesh_report,
                     stability_report)
from .vtkio import write_state

log = logging.getLogger("mfmfe_stokes")


def _package_version():
    try:
        from importlib.metadata import version
        return version("mfmfe-stokes")
    except Exception:
        return "unknown"


def _resolve_mesh(cfg):
    family, spec = cfg.mesh_source()
    if family == "file":
        return read_mesh(spec)
    mesh = structured_square(spec, (0.0, 0.0), (1.0, 1.0), "dirichlet",
                             pattern="crisscross" if family == "crisscross"
                             else "right")
    if family == "perturbed":
        mesh = perturb_mesh(mesh, 0.25, seed=cfg.seed)
    return mesh


def _grid_family(cfg):
    family, n = cfg.mesh_source()
    if family == "file":
        raise ConfigError("convergence studies need a mesh family "
                          "(structured:N, crisscross:N, perturbed:N)")
    return family, n


def _dispatch_convergence_space(cfg, artifacts):
    family, base_n = _grid_family(cfg)
    table = verif.run_test1(
        mode="space", scenario=cfg.scenario, levels=cfg.levels, base_n=base_n,
        dt=cfg.dt, t_final=cfg.tfinal, nu=cfg.nu, grid=family, seed=cfg.seed,
        predictor_tol=cfg.rel_tol, projection_tol=cfg.projection_tol,
        progress=log.info)
    artifacts += convergence_report(table, cfg.out, stem="convergence_space")
    print(table)
    return table


def _dispatch_convergence_time(cfg, artifacts):
    family, base_n = _grid_family(cfg)
    table = verif.run_test1(
        mode="time", scenario=cfg.scenario, time_level=cfg.levels,
        base_n=base_n, dt_schedule=cfg.dt_schedule, t_final=cfg.tfinal,
        nu=cfg.nu, grid=family, seed=cfg.seed, predictor_tol=cfg.rel_tol,
        projection_tol=cfg.projection_tol, progress=log.info)
    artifacts += convergence_report(table, cfg.out, stem="convergence_time")
    print(table)
    return table


def _dispatch_cavity(cfg, artifacts):
    family, n = cfg.mesh_source()
    if family == "file":
        raise ConfigError("cavity runs build their own unit-square mesh; "
                          "pass a mesh family")
    result = verif.run_cavity(
        s=cfg.wall_speed, n=n, pattern="right" if family == "structured"
        else "crisscross", dt=cfg.dt, t_final=cfg.tfinal, nu=cfg.nu,
        progress=log.info)
    artifacts += cavity_report(result, cfg.out)
    vtk = write_state(os.path.join(cfg.out, "cavity_final.vtk"), result.state)
    artifacts.append(vtk)
    print(f"cavity steady in {result.steps} steps, "
          f"residual {result.steady_residual:.3e}, "
          f"net boundary flux {result.net_boundary_flux:.3e}")
    return result


def _dispatch_custom(cfg, artifacts):
    family, n = cfg.mesh_source()
    if family == "file":
        raise ConfigError("decay runs build their own unit-square mesh; "
                          "pass a mesh family")
    os.makedirs(cfg.out, exist_ok=True)

    def on_step(solver, state):
        if cfg.snapshot_every and state.step % cfg.snapshot_every == 0:
            path = os.path.join(cfg.out, f"decay_{state.step:06d}.vtk")
            artifacts.append(write_state(path, state))

    solver, state = verif.run_decay(
        n=n, dt=cfg.dt, n_steps=cfg.steps, nu=cfg.nu,
        pattern="right" if family == "structured" else "crisscross",
        progress=log.info, on_step=on_step)
    artifacts += stability_report(solver, cfg.out, stem="decay")
    artifacts.append(write_state(os.path.join(cfg.out, "decay_final.vtk"),
                                 state))
    ok = solver.ledger.satisfied
    print(f"decay run: {cfg.steps} steps, energy inequality "
          f"{'satisfied' if ok else 'VIOLATED'}, "
          f"max divergence ratio {solver.max_divergence_ratio:.3e}")
    if not ok:
        raise RuntimeError("energy inequality violated")
    return solver


def _dispatch_mesh_info(cfg, artifacts):
    mesh = _resolve_mesh(cfg)
    artifacts += mesh_report(mesh, cfg.out)
    from .mesh import mesh_statistics
    summary, _, _ = mesh_statistics(mesh)
    for key, val in summary.items():
        print(f"{key}: {val}")
    return summary


def dispatch(cfg):
    """Run the configured experiment; returns the artifact list.

    The manifest is written unconditionally; any exception is recorded
    there before being re-raised.
    """
    os.makedirs(cfg.out, exist_ok=True)
    artifacts = []
    manifest = {
        "config": cfg.as_dict(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "mfmfe-stokes": _package_version(),
        },
        "timings": {},
        "status": "ok",
        "failure": None,
        "artifacts": artifacts,
    }
    handlers = {
        "convergence-space": _dispatch_convergence_space,
        "convergence-time": _dispatch_convergence_time,
        "cavity": _dispatch_cavity,
        "custom": _dispatch_custom,
        "mesh-info": _dispatch_mesh_info,
    }
    t0 = time.perf_counter()
    try:
        handlers[cfg.kind](cfg, artifacts)
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["failure"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest["timings"]["dispatch_seconds"] = time.perf_counter() - t0
        with open(os.path.join(cfg.out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
    return artifacts


def _common_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--mesh", help="structured:N | crisscross:N | perturbed:N "
                                  "| mesh file path")
    p.add_argument("--dt", type=float)
    p.add_argument("--tfinal", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--scenario", type=int, choices=(1, 2))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--rel-tol", dest="rel_tol", type=float)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mfmfe-stokes",
        description="Projection-based divergence-free Stokes solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convergence", help="grid or time step refinement study")
    _common_flags(p)
    p.add_argument("--mode", choices=("space", "time"))
    p.add_argument("--levels", type=int)
    p.add_argument("--dt-schedule", dest="dt_schedule",
                   help="comma separated time steps for time mode")

    p = sub.add_parser("cavity", help="lid-driven cavity to steady state")
    _common_flags(p)
    p.add_argument("--wall-speed", dest="wall_speed", type=float,
                   help="bottom wall velocity")

    p = sub.add_parser("run", help="vortex decay run with energy ledger")
    _common_flags(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--snapshot-every", dest="snapshot_every", type=int)

    p = sub.add_parser("mesh-info", help="mesh statistics and histogram")
    _common_flags(p)
    return parser


_OVERRIDE_KEYS = ("mesh", "dt", "tfinal", "nu", "scenario", "seed", "out",
                  "rel_tol", "levels", "dt_schedule", "wall_speed", "steps",
                  "snapshot_every")


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("MFMFE_STOKES_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in _OVERRIDE_KEYS
                 if getattr(args, k, None) is not None}
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "convergence":
        mode = getattr(args, "mode", None)
        if mode is not None:
            cfg.kind = f"convergence-{mode}"
        elif not cfg.kind.startswith("convergence"):
            cfg.kind = "convergence-space"
    elif args.command == "cavity":
        cfg.kind = "cavity"
    elif args.command == "run":
        cfg.kind = "custom"
    elif args.command == "mesh-info":
        cfg.kind = "mesh-info"
    try:
        dispatch(cfg)
    except Exception as exc:
        log.error("run failed: %s", exc)
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
