"""Exception hierarchy shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ToolkitError, ValueError):
    """Tensor/array shape or precondition violation."""


class ConfigError(ToolkitError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class DataError(ToolkitError, ValueError):
    """Missing, malformed, or inconsistent input data."""


class NumericalError(ToolkitError, ArithmeticError):
    """Non-finite value reached a point where finiteness is required."""


class CheckpointError(ToolkitError, ValueError):
    """Malformed, truncated, or incompatible checkpoint file."""
