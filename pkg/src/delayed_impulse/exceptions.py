"""Exception types shared by the solvers and the command-line front end."""

from __future__ import annotations


class ValidationError(ValueError):
    """Raised when an input violates a model, chain or configuration invariant."""


class ConvergenceError(RuntimeError):
    """Raised when a pseudo-time iteration does not reach its tolerance.

    The residual history recorded before giving up is kept on
    ``residuals`` so callers can report it.
    """

    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = [] if residuals is None else list(residuals)


class SchemeViolation(RuntimeError):
    """Raised when a discrete scheme produces NaN, overflow or negative mass."""


class NoInteriorThreshold(ValueError):
    """Raised when a threshold equation has no root inside (0, 1)."""
