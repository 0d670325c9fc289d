"""Exception hierarchy shared by all solver modules."""


class DpgError(Exception):
    """Base class for all toolkit errors."""


class SpecificationError(DpgError):
    """Inconsistent problem data: dimension mismatches, bad parameters."""


class ValidationError(DpgError):
    """A config override or matrix property check failed."""


class NumericalDomainError(DpgError):
    """A callable produced a non-finite value.

    Carries enough context (player/time/point) to locate the evaluation.
    """

    def __init__(self, message, *, player=None, time=None, point=None):
        super().__init__(message)
        self.player = player
        self.time = time
        self.point = point


class FeasibilityError(DpgError):
    """An action or state violated a hard bound."""

    def __init__(self, message, *, time=None, player=None):
        super().__init__(message)
        self.time = time
        self.player = player


class ConditioningError(DpgError):
    """A linear solve hit a numerically singular matrix."""


class NonConvergenceError(DpgError):
    """An iterative solver exhausted its budget.

    The last residual is attached so callers can decide whether the
    partial result is still usable.
    """

    def __init__(self, message, *, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InstabilityError(DpgError):
    """A closed-loop simulation diverged."""

    def __init__(self, message, *, spectral_radius=None):
        super().__init__(message)
        self.spectral_radius = spectral_radius
