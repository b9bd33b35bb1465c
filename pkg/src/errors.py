"""
Exception hierarchy for the phase-field flow optimizer.
The CLI maps ConfigError to exit code 2 and SolverError to exit code 3.
"""

from typing import List, Optional


class PhaseFlowError(Exception):
    """Base class for all optimizer errors."""


class ConfigError(PhaseFlowError):
    """Configuration file, preset or override is invalid."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class InvalidParameterError(PhaseFlowError, ValueError):
    """A numerical parameter is outside its admissible range."""


class DegenerateLevelSetError(PhaseFlowError):
    """The requested level set does not exist or is not resolvable."""


class SolverError(PhaseFlowError):
    """A nonlinear or linear solver failed."""


class LinearSolverError(SolverError):
    """Sparse factorization or GMRES breakdown."""


class OseenNonConvergenceError(SolverError):
    """Oseen fixed point diverged or hit its sweep cap."""

    def __init__(self, message: str, last_iterate=None, residuals: Optional[List[float]] = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residuals = residuals or []


class NewtonNonConvergenceError(SolverError):
    """Semismooth Newton for the Cahn-Hilliard step did not converge."""

    def __init__(self, message: str, residuals: Optional[List[float]] = None):
        super().__init__(message)
        self.residuals = residuals or []


class MeshLimitError(SolverError):
    """Adaptation would exceed the configured simplex cap."""
