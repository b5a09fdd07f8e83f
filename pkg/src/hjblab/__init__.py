"""Numerical laboratory for path-dependent stochastic optimal control on a
spectral Gelfand triple: state dynamics, cost/value functionals, dynamic
programming on scenario trees, cylindrical functional calculus, and the
finite-dimensional approximation studies, behind a FastAPI service with a thin
command-line client."""

__version__ = "0.1.0"

from .spectral import GelfandConstants, SpectralBasis, verify_gelfand

__all__ = ["GelfandConstants", "SpectralBasis", "verify_gelfand", "__version__"]
