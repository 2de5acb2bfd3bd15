"""Exception types shared across the package."""

from __future__ import annotations


class LQGError(Exception):
    """Base class for all errors raised by :mod:`lqg_deceive`."""


class ParameterError(LQGError, ValueError):
    """Invalid or inconsistent model parameters (shapes, definiteness, stability)."""


class ConvergenceError(LQGError):
    """An iterative routine hit its iteration cap.

    ``residual`` carries the last residual so callers can judge how close it got.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class AttackInfeasible(LQGError):
    """No cost parameters make the requested target policy optimal."""


class LearningAborted(LQGError):
    """An online learner stopped early; ``trace`` holds what was recorded."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
