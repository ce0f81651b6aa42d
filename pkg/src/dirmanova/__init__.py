"""Exact and higher-order likelihood tests for equality of multivariate
normal mean vectors, with a Monte Carlo harness for empirical-size studies.

The directional test is exact under a common covariance matrix whenever
n >= p + g + 1, and coincides with Hotelling's T^2 for two groups; the
heteroscedastic variant trades exactness for accuracy well beyond the
reach of the chi-square approximations.
"""

from .core import (
    GroupedSample,
    SummaryStats,
    chol_factor,
    log_det_pd,
    max_eig_sym,
    summarize,
)
from .exceptions import (
    ConvergenceError,
    DataError,
    DirManovaError,
    NotPositiveDefiniteError,
    NumericalError,
    QuadratureError,
    SampleTooSmallError,
)
from .heteroscedastic import (
    HeteroscedasticFit,
    OptimizerSettings,
    behrens_fisher,
    directional_p_hetero,
    fit_heteroscedastic,
    lrt_hetero,
    profile_loglik,
    skovgaard_hetero,
)
from .homoscedastic import (
    HomoscedasticFit,
    bartlett,
    clt_test,
    directional_p,
    expected_w,
    fit_homoscedastic,
    hotelling,
    lrt,
    skovgaard,
)
from .quadrature import (
    DirectionalIntegrand,
    QuadratureSettings,
    RatioResult,
    directional_ratio,
)
from .results import TestResult
from .simulation import (
    CovarianceSpec,
    EmpiricalSizeReport,
    GeneratorSpec,
    MethodSummary,
    SimulationConfig,
    generate_replicate,
    replicate_stream,
    run_empirical_size,
    uniformity_diagnostics,
)

__version__ = "0.1.0"

__all__ = [
    "GroupedSample",
    "SummaryStats",
    "summarize",
    "chol_factor",
    "log_det_pd",
    "max_eig_sym",
    "HomoscedasticFit",
    "fit_homoscedastic",
    "lrt",
    "expected_w",
    "bartlett",
    "skovgaard",
    "clt_test",
    "directional_p",
    "hotelling",
    "HeteroscedasticFit",
    "OptimizerSettings",
    "profile_loglik",
    "fit_heteroscedastic",
    "lrt_hetero",
    "skovgaard_hetero",
    "directional_p_hetero",
    "behrens_fisher",
    "QuadratureSettings",
    "DirectionalIntegrand",
    "RatioResult",
    "directional_ratio",
    "TestResult",
    "CovarianceSpec",
    "GeneratorSpec",
    "SimulationConfig",
    "MethodSummary",
    "EmpiricalSizeReport",
    "replicate_stream",
    "generate_replicate",
    "run_empirical_size",
    "uniformity_diagnostics",
    "DirManovaError",
    "DataError",
    "SampleTooSmallError",
    "NumericalError",
    "NotPositiveDefiniteError",
    "ConvergenceError",
    "QuadratureError",
]
