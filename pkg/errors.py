"""
Exception hierarchy shared by every workflow stage.

Validation problems (bad input, bad configuration) map to CLI exit code 2,
computation problems (non-finite densities, failed sampling) to exit code 3.
"""
from typing import Optional, Tuple


class WorkflowError(Exception):
    """Base class for all workflow errors."""

    exit_code = 1


class ValidationError(WorkflowError, ValueError):
    """Input or configuration failed validation."""

    exit_code = 2


class ComputationError(WorkflowError, RuntimeError):
    """A numerical stage could not produce a result."""

    exit_code = 3


class ParameterDomainError(ValidationError):
    """Distribution parameter or argument outside its domain."""


class ConfigError(ValidationError):
    """Invalid configuration value or unknown configuration key."""


class DataError(ValidationError):
    """Malformed dataset or file content."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class KdeError(ValidationError):
    """Kernel density estimate cannot be formed (zero bandwidth)."""


class EvaluationError(ComputationError):
    """Non-finite value met while evaluating a density or statistic."""

    def __init__(self, message: str, coordinate: Optional[Tuple[int, ...]] = None):
        self.coordinate = coordinate
        if coordinate is not None:
            message = f"{message} (at {coordinate})"
        super().__init__(message)


class SamplingError(ComputationError):
    """Sampler could not make progress (e.g. every warmup transition diverged)."""
