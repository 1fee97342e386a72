"""Seminonparametric (Gallant-Nychka) densities for Monte Carlo ensembles.

Fit ``phi(z) P(z)^2 / S`` Hermite-expansion densities to propagated samples
and evaluate their pdf, analytic marginals, analytic CDF and box
probabilities.
"""
__version__ = "0.1.0"

from ._kernels import BACKEND
from .density import (
    SnpDensity,
    SnpMarginal,
    WhiteningTransform,
    load_density,
    save_density,
)
from .ensemble import (
    GaussianInitial,
    LorenzParams,
    SampleEnsemble,
    lorenz_rhs,
    mc_box_probability,
    propagate,
    propagate_ensemble,
    read_ensemble,
    sample_gaussian,
    write_ensemble,
)
from .errors import (
    DegenerateEnsembleError,
    DimensionError,
    DivergenceError,
    EnsembleParseError,
    InfeasibleBranchError,
    NonFiniteObjectiveError,
    SingularGradientError,
    SnpError,
    UnsupportedGeometryError,
)
from .fit import (
    FitConfig,
    FitReport,
    convex_relaxed_fit,
    fit_snp,
    mle_gradient,
    mle_objective,
    nonlinear_fit,
    relaxed_objective,
    whiten_samples,
)
from .hermite import (
    crossed_lower_integral,
    gaussian_lower_integral,
    hermite_eval,
    hermite_eval_all,
    hermite_product_linearization,
)
from .indexset import MultiIndexSet, build_index_set, coefficient_count
