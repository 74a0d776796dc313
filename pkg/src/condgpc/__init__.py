"""Conductivity estimation from sparse data via conditioned expansions.

The package builds a measurement-conditioned Karhunen-Loeve representation of
a lognormal conductivity field, propagates it through a steady-state diffusion
solve with a Hermite polynomial chaos surrogate, places state measurements
where the surrogate variance peaks, and recovers the field by MCMC over the
reduced coordinates.
"""

from .conditioning import ConditionalKL, pivoted_cholesky_rank, select_full_rank_subset
from .grids import Field, Grid, build_grid, read_observations, write_observations
from .inference import (
    Posterior,
    PosteriorSamples,
    UObservations,
    gelman_rubin,
    map_estimate,
    relative_error,
    sample_posterior,
)
from .kernels import SeparableExponential, SquaredExponential
from .kl import KarhunenLoeve, lognormal_moments
from .pipeline import (
    ExperimentConfig,
    PipelineError,
    SamplerConfig,
    compare_strategies,
    presets,
    run_pipeline,
)
from .placement import (
    PlacementResult,
    baseline_locations,
    find_critical_points,
    select_locations,
)
from .quadrature import (
    QuadratureRule,
    default_rule,
    gauss_hermite,
    hermite_design,
    smolyak_gauss_hermite,
    total_degree_indices,
)
from .solvers import BoundaryConditions, boundary_fluxes, solve_diffusion
from .surrogate import PointSurrogate, PolynomialChaosSurrogate

__version__ = "0.1.0"

__all__ = [
    "BoundaryConditions",
    "ConditionalKL",
    "ExperimentConfig",
    "Field",
    "Grid",
    "KarhunenLoeve",
    "PipelineError",
    "PlacementResult",
    "PointSurrogate",
    "PolynomialChaosSurrogate",
    "Posterior",
    "PosteriorSamples",
    "QuadratureRule",
    "SamplerConfig",
    "SeparableExponential",
    "SquaredExponential",
    "UObservations",
    "baseline_locations",
    "boundary_fluxes",
    "build_grid",
    "compare_strategies",
    "default_rule",
    "find_critical_points",
    "gauss_hermite",
    "gelman_rubin",
    "hermite_design",
    "lognormal_moments",
    "map_estimate",
    "pivoted_cholesky_rank",
    "presets",
    "read_observations",
    "relative_error",
    "run_pipeline",
    "sample_posterior",
    "select_full_rank_subset",
    "select_locations",
    "smolyak_gauss_hermite",
    "solve_diffusion",
    "total_degree_indices",
    "write_observations",
]
