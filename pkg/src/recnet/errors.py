"""Exception types raised by recnet."""


class NonFiniteError(ValueError):
    """An input array contains NaN or infinite entries."""


class DegenerateGainError(ArithmeticError):
    """A weighted least-squares step produced an activation gain of exactly zero."""


class SimulationDivergence(ArithmeticError):
    """The Euler-Maruyama state left the representable range.

    ``step`` is the zero-based index of the first internal step whose state
    exceeded the bound.
    """

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"state diverged at internal step {self.step}")


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap without meeting its tolerance."""
