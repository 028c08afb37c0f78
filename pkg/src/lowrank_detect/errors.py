"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised when an argument violates an operation's precondition."""


class CoverageError(ValueError):
    """Raised when patch aggregation leaves a pixel without any covering value."""

    def __init__(self, coords):
        self.coords = tuple(int(c) for c in coords)
        super().__init__(f"pixel {self.coords} is not covered by any patch")


class DivergenceError(ArithmeticError):
    """Raised when an iterative solver produces non-finite values."""

    def __init__(self, iteration):
        self.iteration = int(iteration)
        super().__init__(f"solver diverged at iteration {self.iteration}")
