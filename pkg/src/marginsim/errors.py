"""Exception types shared across the package."""


class MarginSimError(Exception):
    """Base class for all package errors."""


class TraceParseError(MarginSimError):
    """A trace or capacity file could not be parsed; message names the line."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class TraceSchemaError(MarginSimError):
    """Parsed trace rows do not form a valid whole-day series set."""


class ConfigError(MarginSimError):
    """A scenario config is missing, malformed, or references bad paths."""


class DomainError(MarginSimError, ValueError):
    """A numeric argument is outside its documented domain."""


class CheckpointError(MarginSimError):
    """A checkpoint file is corrupt, truncated, or mismatches the config."""


class NonFiniteGradientError(MarginSimError, FloatingPointError):
    """An optimizer step received NaN or infinite gradients."""
