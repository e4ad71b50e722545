"""Ensemble score filtering for two-phase flow in porous media.

Core pieces: a mixed-FEM/IMPES forward solver on structured grids, a
training-free score-diffusion sampler driving the ensemble score filter, an
LETKF baseline, and an experiment harness exposed through a FastAPI service
with a thin CLI client.
"""

__version__ = "0.1.0"

from .grid import Grid, build_grid
from .fem import SolverParams, StateVector, step
from .ensf import Ensemble, FilterConfig, run_filter
from .letkf import LetkfConfig, run_letkf
from .config import ExperimentConfig

__all__ = [
    "__version__",
    "Grid",
    "build_grid",
    "SolverParams",
    "StateVector",
    "step",
    "Ensemble",
    "FilterConfig",
    "run_filter",
    "LetkfConfig",
    "run_letkf",
    "ExperimentConfig",
]
