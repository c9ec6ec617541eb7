"""Exception hierarchy shared across the package."""


class RfpercError(Exception):
    """Base class for all package-specific errors."""


class DomainError(RfpercError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class AccuracyError(RfpercError, ArithmeticError):
    """A numerical estimate failed to reach the requested accuracy."""


class EvaluationError(RfpercError, ArithmeticError):
    """An integrand produced a non-finite value.

    Attributes
    ----------
    node : float or None
        The quadrature node at which the evaluation failed.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SingularityError(RfpercError, ArithmeticError):
    """A formula was evaluated at (or beyond) a singular configuration.

    Attributes
    ----------
    quantity : str
        Name of the offending quantity (e.g. ``"q"`` or ``"Q_d - Q"``).
    """

    def __init__(self, message, quantity=None):
        super().__init__(message)
        self.quantity = quantity


class NonConvergenceError(RfpercError, RuntimeError):
    """An iterative solver exhausted its iteration budget.

    Attributes
    ----------
    residual : float
        Last update norm.
    iterations : int
        Number of iterations performed.
    state : object or None
        Last iterate, for diagnostics and warm restarts.
    """

    def __init__(self, message, residual=float("nan"), iterations=0, state=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.state = state


class BracketError(RfpercError, RuntimeError):
    """Root bracketing failed: no sign change on the searched interval.

    Attributes
    ----------
    endpoints : tuple
        ((x_lo, f_lo), (x_hi, f_hi)) of the last bracket attempt.
    """

    def __init__(self, message, endpoints=None):
        super().__init__(message)
        self.endpoints = endpoints
