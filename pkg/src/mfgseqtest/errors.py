"""Exception types raised by the solver package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the function."""


class NonDifferentiableError(ValueError):
    """Derivative requested at the kink of a piecewise-linear loss."""


class NoInteriorSolution(RuntimeError):
    """The infinite-horizon problem has an empty continuation region."""


class GridError(ValueError):
    """Grids are incompatible or too coarse for the requested computation."""


class ConfigError(ValueError):
    """A configuration file or override is malformed.

    ``key`` names the offending entry (dotted path) when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
