"""Bayesian inversion of the conductivity in div(f grad u) = g from noisy point data."""
from .errors import *  # noqa: F401,F403
from .forward import SolverConfig, SourceTerm, forward_map, solve_1d_closed_form, solve_fd
from .grid import DomainSpec, Grid, GridField, build_grid
from .link import LinkTable, apply_link, build_link, invert_link
from .mcmc import ChainConfig, ChainRecord, posterior_mean, run_chain
from .observation import Dataset, Likelihood, generate_dataset
from .priors import PriorSpec, build_prior, draw_prior

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "ChainRecord",
    "Dataset",
    "DomainSpec",
    "Grid",
    "GridField",
    "Likelihood",
    "LinkTable",
    "PriorSpec",
    "SolverConfig",
    "SourceTerm",
    "apply_link",
    "build_grid",
    "build_link",
    "build_prior",
    "draw_prior",
    "forward_map",
    "generate_dataset",
    "invert_link",
    "posterior_mean",
    "run_chain",
    "solve_1d_closed_form",
    "solve_fd",
]
