"""Continuation and verification toolkit for the constrained plasma problem.

    -Δψ = (α + λψ)^p in Ω,   ψ = 0 on ∂Ω,   ∫(α + λψ)^p = 1,

on unit-measure domains, discretized with P1 finite elements.
"""
__version__ = "0.1.0"

from .geometry import DomainSpec, Mesh, build_mesh, perturb_domain  # noqa: E402
from .operators import Field, operators_for  # noqa: E402
from .newton import PlasmaConfig, PlasmaState, newton_solve  # noqa: E402
from .continuation import ContinuationConfig, trace_branch  # noqa: E402
from .spectrum import eigenpairs, sobolev_constant  # noqa: E402
from .variational import minimize_free_energy, lambda_star_star  # noqa: E402
from .dual import to_dual, to_primal  # noqa: E402

__all__ = [
    "DomainSpec", "Mesh", "build_mesh", "perturb_domain", "Field", "operators_for",
    "PlasmaConfig", "PlasmaState", "newton_solve", "ContinuationConfig", "trace_branch",
    "eigenpairs", "sobolev_constant", "minimize_free_energy", "lambda_star_star",
    "to_dual", "to_primal",
]
