"""Aggregated posterior checks for factor analysis, switching linear
dynamical systems and Gaussian-process regression."""

from ._backend import BACKEND
from .critic import (
    ECDF,
    AggregatedSample,
    BinnedConditional,
    DegenerateSampleError,
    TestResult,
    abs_correlation_test,
    binned_conditional,
    ecdf,
    kolmogorov_pvalue,
    ks_test,
    mmd,
    pearson_test,
    pvalue_plugin,
    pvalue_posterior,
    pvalue_prior,
)
from .dists import (
    MVN,
    Categorical,
    Dirichlet,
    Gamma,
    IIDProduct,
    Laplace,
    Normal,
    ScaleMixtureNormal,
    UnsupportedOperation,
)
from .numerics import (
    DimensionError,
    NumericalRankError,
    RngStream,
    SymEig,
    cholesky,
    rng_draws,
    solve_spd,
    sym_eig,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AggregatedSample",
    "BinnedConditional",
    "Categorical",
    "DegenerateSampleError",
    "DimensionError",
    "Dirichlet",
    "ECDF",
    "Gamma",
    "IIDProduct",
    "Laplace",
    "MVN",
    "Normal",
    "NumericalRankError",
    "RngStream",
    "ScaleMixtureNormal",
    "SymEig",
    "TestResult",
    "UnsupportedOperation",
    "abs_correlation_test",
    "binned_conditional",
    "cholesky",
    "ecdf",
    "kolmogorov_pvalue",
    "ks_test",
    "mmd",
    "pearson_test",
    "pvalue_plugin",
    "pvalue_posterior",
    "pvalue_prior",
    "rng_draws",
    "solve_spd",
    "sym_eig",
]
