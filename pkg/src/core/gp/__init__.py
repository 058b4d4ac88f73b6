"""
Gaussian Process Core

Kernels and numerically stable Gaussian primitives
"""

from src.core.gp.kernels import (
    Kernel,
    KernelParams,
    NoiseParams,
    SquaredExponentialKernel,
    get_kernel,
    kernel_matrix
)
from src.core.gp.linalg import (
    CholeskyResult,
    GaussianDist,
    gp_condition,
    mvn_logpdf,
    safe_cholesky,
    sample_mvn
)

__all__ = [
    "Kernel",
    "KernelParams",
    "NoiseParams",
    "SquaredExponentialKernel",
    "get_kernel",
    "kernel_matrix",
    "CholeskyResult",
    "GaussianDist",
    "gp_condition",
    "mvn_logpdf",
    "safe_cholesky",
    "sample_mvn"
]
