"""Scaled spectral limited-memory preconditioning for sequences of SPD systems.

The package provides a matrix-free conjugate-gradient family (CG, PCG,
deflated CG) with full per-iteration tracing, Ritz-pair extraction from the
CG recurrence, the scaled spectral limited-memory preconditioner with
several scaling-parameter selection strategies, and a desk-scale Lorenz-96
variational assimilation harness driving a sequence of preconditioned
solves.
"""

from .linops import (
    DimensionMismatchError,
    EigDecomposition,
    LinearOperator,
    NotSpdError,
    dense_eig,
    direct_solve,
    energy_norm,
    symmetric_sqrt,
)
from .krylov import (
    BreakdownError,
    DeflationSubspaceError,
    KrylovConfig,
    LanczosData,
    PreconditionerNotSpdError,
    RitzPairs,
    SolveTrace,
    cg,
    chebyshev_bound,
    deflated_cg,
    energy_error_oracle,
    extract_ritz_pairs,
    pcg,
)
from .slmp import (
    BasisError,
    ComposedPreconditioner,
    DegenerateResidualError,
    ScaledSpectralPreconditioner,
    SpectralBasis,
    compose,
    deflation_initial_guess,
    improvement_interval,
    init_slmp_guess,
    make_preconditioner,
    midrange_ratio,
    resolve_theta,
)

__version__ = "0.1.0"

__all__ = [
    "BasisError",
    "BreakdownError",
    "ComposedPreconditioner",
    "DeflationSubspaceError",
    "DegenerateResidualError",
    "DimensionMismatchError",
    "EigDecomposition",
    "KrylovConfig",
    "LanczosData",
    "LinearOperator",
    "NotSpdError",
    "PreconditionerNotSpdError",
    "RitzPairs",
    "ScaledSpectralPreconditioner",
    "SolveTrace",
    "SpectralBasis",
    "cg",
    "chebyshev_bound",
    "compose",
    "deflated_cg",
    "deflation_initial_guess",
    "dense_eig",
    "direct_solve",
    "energy_error_oracle",
    "energy_norm",
    "extract_ritz_pairs",
    "improvement_interval",
    "init_slmp_guess",
    "make_preconditioner",
    "midrange_ratio",
    "pcg",
    "resolve_theta",
    "symmetric_sqrt",
]
