"""Bayesian multilevel conditional-autoregressive regression toolkit."""

__version__ = "0.1.0"

from .data import CovariateInfo, LongDataset
from .errors import (CarlevelError, ConfigurationError, ConvergenceError,
                     NumericalError, ValidationError)
from .graph import (PrecisionMatrix, SpatialGraph, TemporalGraph,
                    build_leroux_precision, build_temporal_precision,
                    leroux_conditional, validate_graph)
from .mcmc import ChainOutput, McmcConfig, run_chain, run_chains
from .models import (GibbsModel, ModelSpec, ModelState, PriorConfig,
                     RestrictionMatrix, build_restriction, restrict_projection)
from .sampling import (CholeskyFactor, RngStream, sample_gmrf,
                       sample_inverse_gamma, sample_normal, sample_uniform,
                       slice_sample)
from .simulate import (Scenario, lattice_geography, scenario_grid,
                       simulate_cross_sectional, simulate_longitudinal,
                       simulate_spatiotemporal_effect)

__all__ = [
    "CarlevelError", "ValidationError", "ConfigurationError", "NumericalError",
    "ConvergenceError",
    "SpatialGraph", "TemporalGraph", "PrecisionMatrix", "validate_graph",
    "build_leroux_precision", "build_temporal_precision", "leroux_conditional",
    "RngStream", "CholeskyFactor", "sample_normal", "sample_uniform",
    "sample_inverse_gamma", "sample_gmrf", "slice_sample",
    "LongDataset", "CovariateInfo",
    "ModelSpec", "ModelState", "PriorConfig", "GibbsModel", "RestrictionMatrix",
    "build_restriction", "restrict_projection",
    "McmcConfig", "ChainOutput", "run_chain", "run_chains",
    "Scenario", "scenario_grid", "lattice_geography",
    "simulate_spatiotemporal_effect", "simulate_longitudinal",
    "simulate_cross_sectional",
]
