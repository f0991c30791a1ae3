"""Exception hierarchy shared by every module."""


class GRRError(Exception):
    """Base class for all errors raised by the package."""


class InvalidParameterError(GRRError, ValueError):
    """A parameter is outside its admissible range."""


class InvalidInputError(GRRError, ValueError):
    """Input data is malformed (non-finite values, wrong shapes, ...)."""


class DimensionMismatchError(InvalidInputError):
    pass


class ZeroVarianceError(GRRError, ValueError):
    """A score-generating function is constant and cannot be normalized."""


class IllPosedDensityError(GRRError, ValueError):
    """Fisher information is non-finite or non-positive."""


class InsufficientDataError(GRRError, ValueError):
    pass


class NumericError(GRRError, ArithmeticError):
    """Quadrature or linear algebra failed to produce a trustworthy number."""


class ConditionViolationError(GRRError, ValueError):
    """A theoretical precondition (e.g. positive curvature constant) fails."""


class ConfigurationError(GRRError, ValueError):
    pass


class DivergenceError(GRRError, ArithmeticError):
    """An optimizer iterate became non-finite or left the safety ball."""


class DegenerateWeightsError(GRRError, ValueError):
    pass


class ParseError(GRRError, ValueError):
    pass


class OutputExistsError(GRRError, FileExistsError):
    """Refusing to overwrite an existing output without ``force``."""


class ResultIOError(GRRError, OSError):
    """Reading or writing a result file failed."""
