"""Smoothing properties of semigroups driven by subordinated Brownian motion."""

from .errors import DomainError, NotApplicableError, UnsupportedError
from .kernels import HeatKernelSpec, MultiIndex, derivative_tensor, frechet_derivative, heat_kernel, heat_kernel_partial
from .semigroup import NoiseSpec, TestFunction, apply_gaussian, apply_subordinated, subordinated_density, verify_smoothing_bound
from .subordinators import DriftOnly, Gamma, Method, MomentQuery, MomentResult, Stable, Status, moment, negative_moment

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "DriftOnly",
    "Gamma",
    "HeatKernelSpec",
    "Method",
    "MomentQuery",
    "MomentResult",
    "MultiIndex",
    "NoiseSpec",
    "NotApplicableError",
    "Stable",
    "Status",
    "TestFunction",
    "UnsupportedError",
    "apply_gaussian",
    "apply_subordinated",
    "derivative_tensor",
    "frechet_derivative",
    "heat_kernel",
    "heat_kernel_partial",
    "moment",
    "negative_moment",
    "subordinated_density",
    "verify_smoothing_bound",
]
