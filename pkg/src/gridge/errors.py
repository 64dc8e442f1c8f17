"""Exception types shared across the package."""


class GridgeError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(GridgeError, ValueError):
    """Bad shapes, non-finite inputs, or out-of-range arguments."""


class DataError(InvalidArgumentError):
    """Malformed input data (CSV parsing, group coding)."""


class SolverFailure(GridgeError, RuntimeError):
    """The Newton system stayed singular after the damping ladder was exhausted."""


class SingularMomentError(GridgeError, ValueError):
    """A moment matrix that must be inverted is singular or has the wrong definiteness."""


class InvalidWeightingError(GridgeError, ValueError):
    """A weighting matrix violates its positive-definiteness or structure contract."""


class DegenerateFoldError(GridgeError, ValueError):
    """A cross-validation training fold lost an outcome category."""


class InvalidSpecError(GridgeError, ValueError):
    """A simulation design that cannot be realized."""


class ConfigError(GridgeError, ValueError):
    """Invalid CLI/experiment configuration."""
