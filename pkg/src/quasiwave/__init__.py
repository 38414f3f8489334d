"""Viscous approximation, thermodynamics and hydrodynamic diagnostics for the
quasilinear wave system ``r_t = p_x``, ``p_t = tau(r)_x`` on ``[0, 1]`` with a
time-dependent tension applied at ``x = 1``."""
from .config import ConfigError, ExperimentConfig, load_config
from .model import (BoundaryTensionProfile, Grid, InitialData, ModelError, StateField, TensionModel,
                    make_linear_tension, make_softplus_tension, mollify_initial_data)
from .viscous_solver import SolverError, Trajectory, ViscousConfig, solve

__version__ = "0.1.0"

__all__ = [
    "BoundaryTensionProfile",
    "ConfigError",
    "ExperimentConfig",
    "Grid",
    "InitialData",
    "ModelError",
    "SolverError",
    "StateField",
    "TensionModel",
    "Trajectory",
    "ViscousConfig",
    "load_config",
    "make_linear_tension",
    "make_softplus_tension",
    "mollify_initial_data",
    "solve",
]
