"""Exception types shared across the package."""
from __future__ import annotations


class ImulocError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ImulocError):
    """Invalid configuration value or malformed config file."""


class InputError(ImulocError):
    """Operation received data that violates its preconditions."""


class DegenerateGeometryError(ImulocError):
    """Channel geometry is degenerate (e.g. UE colocated with a TRP)."""


class EmptyDatasetError(ImulocError):
    """A filtering step removed every sample."""


class FitDivergedError(ImulocError):
    """Trajectory fit produced a non-finite loss."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"fit diverged at step {step}")


class NumericalError(ImulocError):
    """Numerical failure (singular covariance, non-finite loss) with location."""


class ContainerError(ImulocError):
    """Base class for dataset container I/O errors."""


class ContainerFormatError(ContainerError):
    """File does not start with the container magic bytes."""


class ContainerVersionError(ContainerError):
    """Container format version is not supported."""


class ContainerChecksumError(ContainerError):
    """Header checksum does not match the stored value."""


class ContainerTruncatedError(ContainerError):
    """File is shorter than the header says it should be."""
