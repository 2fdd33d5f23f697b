"""Exception types shared across the workbench."""


class MkotError(Exception):
    """Base class for all workbench errors."""


class DomainError(MkotError):
    """A point violates its chart constraints or a cost's admissible domain."""


class StencilError(MkotError):
    """A finite-difference stencil left the chart's admissible region."""


class InfeasibleError(MkotError):
    """Transport marginals do not balance beyond tolerance."""


class NumericalError(MkotError):
    """An iterative solver exceeded its safeguard (cycling, iteration cap)."""


class EmptyDomainError(MkotError):
    """A transform was requested over an empty atom or grid set."""


class NoConvergenceError(MkotError):
    """Newton or ascent iteration failed to reach its residual target."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateError(MkotError):
    """The mixed cost Hessian is numerically singular at the sample."""
