"""
Exception hierarchy shared by all modules.
"""

from pathlib import Path
from typing import Optional


class LatentRestorationError(Exception):
    """Base class for all package errors."""


class ContractViolation(LatentRestorationError, ValueError):
    """A documented precondition of an operation was not met."""


class NumericError(LatentRestorationError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message: str, step: Optional[int] = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class ConfigError(LatentRestorationError, ValueError):
    """Invalid experiment configuration file or value."""

    def __init__(
        self,
        message: str,
        key_path: Optional[str] = None,
        line_number: Optional[int] = None,
    ):
        location = []
        if key_path:
            location.append(f"key '{key_path}'")
        if line_number is not None:
            location.append(f"line {line_number}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.key_path = key_path
        self.line_number = line_number


class TrainingError(LatentRestorationError):
    """Training diverged; the last good checkpoint is kept on disk."""

    def __init__(self, message: str, last_checkpoint: Optional[Path] = None):
        if last_checkpoint is not None:
            message = f"{message} (last good checkpoint: {last_checkpoint})"
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class InsufficientSamplesError(ContractViolation):
    """Too few paired samples for a meaningful bound estimate."""


class StageError(LatentRestorationError):
    """An experiment stage failed."""

    def __init__(self, stage: str, cause: BaseException, last_checkpoint: Optional[Path] = None):
        message = f"Stage '{stage}' failed: {cause}"
        if last_checkpoint is not None:
            message += f" (last checkpoint: {last_checkpoint})"
        super().__init__(message)
        self.stage = stage
        self.cause = cause
        self.last_checkpoint = last_checkpoint
