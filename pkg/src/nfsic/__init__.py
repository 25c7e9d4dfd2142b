"""Adaptive kernel independence testing with analytic embeddings at finite test locations."""

__version__ = "0.1.0"

from nfsic.errors import (  # noqa: E402
    DegenerateInputError,
    DomainError,
    InputError,
    NfsicError,
    SingularCovarianceError,
)
from nfsic.kernels import GaussianKernel, median_heuristic, median_kernel  # noqa: E402
from nfsic.statistic import (  # noqa: E402
    JointSample,
    NfsicState,
    TestLocations,
    fsic_statistic,
    nfsic_statistic,
    witness_surface,
)
from nfsic.htest import TestOutcome, test_chi2, test_permutation  # noqa: E402
from nfsic.tuning import TunedParams, TuningConfig, adaptive_test, optimize, split  # noqa: E402
from nfsic.baselines import hsic_statistic, hsic_test  # noqa: E402

__all__ = [
    "DegenerateInputError", "DomainError", "InputError", "NfsicError", "SingularCovarianceError",
    "GaussianKernel", "median_heuristic", "median_kernel",
    "JointSample", "NfsicState", "TestLocations", "fsic_statistic", "nfsic_statistic",
    "witness_surface", "TestOutcome", "test_chi2", "test_permutation",
    "TunedParams", "TuningConfig", "adaptive_test", "optimize", "split",
    "hsic_statistic", "hsic_test",
]
