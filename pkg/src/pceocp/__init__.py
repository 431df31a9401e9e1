"""Polynomial chaos transcription and interior-point solution of stochastic
linear optimal control problems with chance constraints."""

__version__ = "0.1.0"

from .measures import Family, MeasureSpec, make_basis, gauss_rule
from .pce import MultiBasis, PCEVector, affine_pce, univariate_pce, gen_pce, gaussian_mv_pce, stack, sample
from .horizon import HorizonBasis, joint_basis
from .transcription import ChanceSpec, ConicProgram, StochasticProblem, build, gamma
from .solver import PCESolution, Solver, SolverError, SolverOptions, solve
from .mpc import Controller, Plant, DisturbanceSampler, Ensemble, monte_carlo, simulate_closed_loop
from .density import DensityGrid, GridSpec, pdf_from_pce, ks_distance
from .config import ConfigError, ProblemConfig, load_config, parse_config

__all__ = [
    "__version__",
    "Family", "MeasureSpec", "make_basis", "gauss_rule",
    "MultiBasis", "PCEVector", "affine_pce", "univariate_pce", "gen_pce", "gaussian_mv_pce", "stack", "sample",
    "HorizonBasis", "joint_basis",
    "ChanceSpec", "ConicProgram", "StochasticProblem", "build", "gamma",
    "PCESolution", "Solver", "SolverError", "SolverOptions", "solve",
    "Controller", "Plant", "DisturbanceSampler", "Ensemble", "monte_carlo", "simulate_closed_loop",
    "DensityGrid", "GridSpec", "pdf_from_pce", "ks_distance",
    "ConfigError", "ProblemConfig", "load_config", "parse_config",
]
