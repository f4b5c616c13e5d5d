"""Exception types shared across the library."""


class CitnetError(Exception):
    """Base class for all library errors."""


class DimensionError(CitnetError, ValueError):
    """Shapes or axes do not satisfy an operation's contract."""


class ConfigError(CitnetError, ValueError):
    """A configuration value is invalid or inconsistent."""


class UsageError(CitnetError, TypeError):
    """An API was called with arguments outside its contract."""


class NumericsError(CitnetError, ArithmeticError):
    """A tensor left the finite-value domain (NaN or Inf)."""


class TrainingDiverged(CitnetError, RuntimeError):
    """The optimizer produced a non-finite loss."""
