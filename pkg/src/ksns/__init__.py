"""Keller-Segel-Navier-Stokes simulator with porous-medium diffusion and
tensor-valued chemotactic flux on masked MAC grids."""

from ksns.errors import (
    CompatibilityError,
    ConfigError,
    HypothesisError,
    KSNSError,
    SolverError,
    StateError,
    StepError,
)
from ksns.grid import Grid, ScalarField, VectorField, inner, integrate, lp_norm, make_grid
from ksns.kernels import BACKEND
from ksns.linalg import LinearSolveSpec, helmholtz_project, solve, yosida_apply
from ksns.model import ModelParams, Potential, SensitivityTensor, eval_sensitivity
from ksns.stepper import RunResult, SimState, StepControl, advance, initial_state, run

__all__ = [
    "BACKEND", "CompatibilityError", "ConfigError", "Grid", "HypothesisError", "KSNSError",
    "LinearSolveSpec", "ModelParams", "Potential", "RunResult", "ScalarField", "SensitivityTensor",
    "SimState", "SolverError", "StateError", "StepControl", "StepError", "VectorField", "advance",
    "eval_sensitivity", "helmholtz_project", "initial_state", "inner", "integrate", "lp_norm",
    "make_grid", "run", "solve", "yosida_apply",
]
