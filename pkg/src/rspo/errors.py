"""Exception hierarchy shared by all modules."""


class RSPOError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(RSPOError, ValueError):
    """Input data does not satisfy a documented invariant."""


class DimensionError(ValidationError):
    pass


class RangeError(ValidationError):
    pass


class ConsistencyError(ValidationError):
    """A preference matrix violates P(i,i)=1/2 or P(i,j)+P(j,i)=1.

    ``row`` and ``col`` hold the offending coordinates when known.
    """

    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class ConfigError(ValidationError):
    """A configuration record is malformed; ``field`` names the culprit."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class SupportError(RSPOError, ValueError):
    """A divergence or log-ratio is infinite on the given supports."""


class InnerSolveError(RSPOError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NonConvergenceError(RSPOError, RuntimeError):
    def __init__(self, message, residual=None, rounds=None):
        super().__init__(message)
        self.residual = residual
        self.rounds = rounds


class DegenerateError(RSPOError, ValueError):
    pass


class SingularError(RSPOError, ValueError):
    pass


class SolverError(RSPOError, RuntimeError):
    """Wraps a failure inside the outer self-play loop with its iteration."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
