"""Exception types raised across the package."""

from __future__ import annotations


class GraphDLMError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GraphDLMError, ValueError):
    """Invalid configuration or inconsistent inputs."""


class ValidationError(GraphDLMError, ValueError):
    """An argument violates a documented precondition."""


class DisconnectedGraphError(ConfigurationError):
    """The sensor graph built from the distance table is not connected."""


class DataError(GraphDLMError, ValueError):
    """Malformed or insufficient input data."""


class NumericalOverflowError(GraphDLMError, ArithmeticError):
    """A numerical evaluation produced a non-finite value."""

    def __init__(self, message: str, alpha: float | None = None, gamma: float | None = None):
        super().__init__(message)
        self.alpha = alpha
        self.gamma = gamma


class HorizonError(GraphDLMError, ValueError):
    """A forecast horizon runs past the trained slots."""


class ModelFileError(GraphDLMError, ValueError):
    """A model container is corrupt or has an unsupported schema."""


class SlotError(GraphDLMError):
    """Wraps an error raised while fitting one time slot."""

    def __init__(self, slot: int, cause: Exception):
        super().__init__(f"slot {slot}: {type(cause).__name__}: {cause}")
        self.slot = slot
        self.cause = cause
