"""Exception types raised across the package."""

import numpy as np


class BraggEdgeError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(BraggEdgeError, ValueError):
    """An argument is malformed, non-finite or out of its domain."""


class InsufficientDataError(BraggEdgeError, ValueError):
    """Too few samples for the requested operation."""


class FitFailureError(BraggEdgeError, RuntimeError):
    """A least-squares fit did not converge.

    ``diagnostics`` carries whatever the optimiser knew when it gave up.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class MethodFailureError(BraggEdgeError, RuntimeError):
    """A strain-estimation method failed; ``stage`` names the step."""

    def __init__(self, message, stage=None, diagnostics=None):
        super().__init__(message if stage is None else f"[stage {stage}] {message}")
        self.stage = stage
        self.diagnostics = dict(diagnostics or {})


class ConditioningError(BraggEdgeError, np.linalg.LinAlgError):
    """Cholesky factorisation failed even with the largest jitter."""

    def __init__(self, message, condition_estimate=None):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class OptimizationError(BraggEdgeError, RuntimeError):
    """Every hyperparameter optimisation start failed."""

    def __init__(self, message, starts=None):
        super().__init__(message)
        self.starts = list(starts or [])
