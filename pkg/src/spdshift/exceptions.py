"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or invalid shapes."""


class DomainError(ValueError):
    """Input lies outside the mathematical domain of the operation
    (e.g. an eigenvalue below the SPD floor)."""


class NumericalError(RuntimeError):
    """An iterative numerical routine failed (non-convergence, non-finite
    values). Carries optional diagnostic attributes."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class ConvergenceError(NumericalError):
    """An optimizer hit its iteration budget. ``last_iterate`` and
    ``grad_norm`` hold the state at the point of failure."""

    def __init__(self, message, iterations=None, last_iterate=None, grad_norm=None):
        super().__init__(message, iterations=iterations)
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm


class DegenerateDataError(ValueError):
    """A dataset operation produced or received unusable data
    (e.g. a class with zero examples)."""
