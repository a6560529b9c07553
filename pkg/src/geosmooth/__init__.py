"""Cell-based smoothed finite elements for elastic-plastic plane-strain soil analysis."""
from .constitutive import ElasticParams, MohrCoulombParams
from .mesh import Mesh, read_mesh, write_mesh
from .solver import LoadSet, Material, Model, SolverSettings, Step, initial_state, run_schedule, run_step
from .caseio import parse_case, shipped_case, write_case
from .kernels import BACKEND

__all__ = [
    "ElasticParams", "MohrCoulombParams", "Mesh", "read_mesh", "write_mesh", "LoadSet", "Material",
    "Model", "SolverSettings", "Step", "initial_state", "run_schedule", "run_step", "parse_case",
    "shipped_case", "write_case", "BACKEND",
]
__version__ = "0.1.0"
