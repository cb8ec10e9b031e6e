"""Unsteady incompressible Stokes by pressure-correction projection on
multipoint-flux mixed elements; velocities come out pointwise divergence
free and every linear solve is sparse SPD."""

from .assembly import SchurOperator, build_schur
from .config import ConfigError, RunConfig, parse_config
from .mesh import (DIRICHLET, NEUMANN, build_mesh, mesh_statistics,
                   perturb_mesh, read_mesh, structured_square, uniform_refine,
                   write_mesh)
from .solver import ProjectionSolver, StokesProblem
from .spaces import FluxSpace, HdivField, P1Field, P1VectorField
from .verification import (ConvergenceTable, convergence_rate, run_cavity,
                           run_decay, run_test1, sample_field)
from .vtkio import read_vtk, write_state, write_vtk

__version__ = "0.1.0"

__all__ = [
    "SchurOperator", "build_schur",
    "ConfigError", "RunConfig", "parse_config",
    "DIRICHLET", "NEUMANN", "build_mesh", "mesh_statistics", "perturb_mesh",
    "read_mesh", "structured_square", "uniform_refine", "write_mesh",
    "ProjectionSolver", "StokesProblem",
    "FluxSpace", "HdivField", "P1Field", "P1VectorField",
    "ConvergenceTable", "convergence_rate", "run_cavity", "run_decay",
    "run_test1", "sample_field",
    "read_vtk", "write_state", "write_vtk",
    "__version__",
]
