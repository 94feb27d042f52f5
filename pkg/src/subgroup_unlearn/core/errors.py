"""Error codes and exception hierarchy.

This module centralizes the error codes raised by the library so that
the command line interface can map every failure onto a stable exit
code. Having the codes defined in one place keeps the schemas, the
stage logs and the runtime behaviour consistent.
"""

from __future__ import annotations

from enum import Enum
from typing import List, Optional


class ErrorCode(str, Enum):
    CONFIGURATION = "CONFIGURATION"
    INPUT_SHAPE = "INPUT_SHAPE"
    VOCABULARY = "VOCABULARY"
    DEGENERATE_INPUT = "DEGENERATE_INPUT"
    COVERAGE = "COVERAGE"
    UNDEFINED_BASELINE = "UNDEFINED_BASELINE"
    SCHEMA_VALIDATION = "SCHEMA_VALIDATION"
    TRAINING_FAILURE = "TRAINING_FAILURE"
    MERGE = "MERGE"


EXIT_OK = 0
EXIT_CONFIGURATION = 2
EXIT_TRAINING_FAILURE = 3
EXIT_INCOMPATIBLE = 4


class UnlearnError(Exception):
    """Base class for every error raised by ``subgroup_unlearn``."""

    code: ErrorCode = ErrorCode.CONFIGURATION
    exit_code: int = EXIT_CONFIGURATION

    def __init__(self, message: str, details: Optional[List[str]] = None) -> None:
        super().__init__(message)
        self.details = details or []

    def __str__(self) -> str:
        base = super().__str__()
        if not self.details:
            return base
        return base + "\n" + "\n".join(f"  - {d}" for d in self.details)


class ConfigurationError(UnlearnError):
    """Invalid configuration value, file or argument."""
    code = ErrorCode.CONFIGURATION


class InputShapeError(UnlearnError):
    """Images do not match the spatial shape declared by the model spec."""
    code = ErrorCode.INPUT_SHAPE


class VocabularyError(UnlearnError):
    """Prompt index outside the vocabulary."""
    code = ErrorCode.VOCABULARY


class DegenerateInputError(UnlearnError):
    """Zero vector passed where a direction is required."""
    code = ErrorCode.DEGENERATE_INPUT


class CoverageError(UnlearnError):
    """A vocabulary class has no example in the training data."""
    code = ErrorCode.COVERAGE


class UndefinedBaselineError(UnlearnError):
    """Restoration ratio requested against a zero original accuracy."""
    code = ErrorCode.UNDEFINED_BASELINE


class SchemaValidationError(UnlearnError):
    """Raised when a JSON document fails schema validation."""
    code = ErrorCode.SCHEMA_VALIDATION

    def __init__(self, message: str, errors: Optional[list] = None) -> None:
        super().__init__(message, details=list(errors or []))
        self.errors = errors or []


class TrainingFailure(UnlearnError):
    """Loss became non-finite during an optimization loop."""
    code = ErrorCode.TRAINING_FAILURE
    exit_code = EXIT_TRAINING_FAILURE

    def __init__(self, stage: str, step: int, message: str = "loss became non-finite") -> None:
        super().__init__(f"{stage} failed at step {step}: {message}")
        self.stage = stage
        self.step = step


class MergeError(UnlearnError):
    """Two parameter sets (or a model and a task) are not compatible."""
    code = ErrorCode.MERGE
    exit_code = EXIT_INCOMPATIBLE
