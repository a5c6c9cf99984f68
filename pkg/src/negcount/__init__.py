"""Negative-eigenvalue counting and bounds for discrete Schrodinger operators."""
from .core import (
    BoxSpec,
    DivergenceError,
    Family,
    FamilyMismatchError,
    InvariantViolation,
    ModelSpec,
    NonConvergenceError,
    NumericalError,
    Potential,
    ToleranceConfig,
    ValidationError,
    hier_distance,
    hier_rho,
    make_potential,
)

__all__ = [
    "BoxSpec",
    "DivergenceError",
    "Family",
    "FamilyMismatchError",
    "InvariantViolation",
    "ModelSpec",
    "NonConvergenceError",
    "NumericalError",
    "Potential",
    "ToleranceConfig",
    "ValidationError",
    "hier_distance",
    "hier_rho",
    "make_potential",
]

__version__ = "0.1.0"
