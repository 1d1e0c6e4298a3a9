"""Stabilized reduced Bernardi-Raugel finite-element flow solvers.

P1 vector + normal face bubble velocities with P0 pressure, statically
condensed to P1/P0 size; divergence-free-postprocessed right-hand sides and
an edge-averaged (Bernoulli-weighted) convection discretization give
viscosity-robust schemes for Stokes, Oseen, and Navier-Stokes flow.
"""

from .fespace import (BRField, DofLayout, ExactSolution, FeField,
                      bdm_interpolate, nodal_interpolate, p0_project,
                      zero_mean_pressure)
from .forms import ConvectionField
from .kernels import BACKEND
from .mesh import (MeshError, SimplicialMesh, quad_refine, uniform_box_mesh,
                   uniform_rectangle_mesh)
from .schemes import (Discretization, PicardControls, SolverError,
                      SolverReport, solve_navier_stokes, solve_oseen,
                      solve_stokes, step_unsteady)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BRField", "ConvectionField", "Discretization", "DofLayout",
    "ExactSolution", "FeField", "MeshError", "PicardControls",
    "SimplicialMesh", "SolverError", "SolverReport", "bdm_interpolate",
    "nodal_interpolate", "p0_project", "quad_refine", "solve_navier_stokes",
    "solve_oseen", "solve_stokes", "step_unsteady", "uniform_box_mesh",
    "uniform_rectangle_mesh", "zero_mean_pressure", "__version__",
]
