"""Exception taxonomy shared across the toolkit.

CLI exit-code mapping: every subclass of :class:`AltogetherError` (and
``FileNotFoundError``-style OS errors) is a *user-facing* failure. The CLI
maps domain errors to exit 1, OS-level I/O to exit 2, and anything else to 3.
"""

from __future__ import annotations


class AltogetherError(Exception):
    """Base class for all domain errors raised by this package."""


class ParseError(AltogetherError):
    """A line of an input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IngestionError(AltogetherError):
    """Corpus-level ingestion failure (e.g. duplicate ids)."""


class NotFoundError(AltogetherError):
    """A referenced entity (item, project, assignment) does not exist."""


class SequencingError(AltogetherError):
    """Round numbers per item must be contiguous starting at 1."""


class EmptyRoundError(AltogetherError):
    """No item has a record at the requested round."""


class ValidationError(AltogetherError):
    """An input value violates a documented precondition."""


class ConfigError(AltogetherError):
    """A configuration object is internally inconsistent."""


class FormatError(AltogetherError):
    """A binary or structured file does not match its declared format."""


class ShapeError(AltogetherError):
    """Array dimensions do not line up."""


class DomainError(AltogetherError):
    """A numeric input is outside the mathematical domain of an operation."""


class RangeError(AltogetherError):
    """A scalar argument is outside its allowed range."""


class AlignmentError(AltogetherError):
    """Prediction/reference ids do not align."""

    def __init__(self, message: str, missing_ids: list[str] | None = None):
        super().__init__(message)
        self.missing_ids = missing_ids or []


class DependencyError(AltogetherError):
    """A required precomputed input (e.g. n-gram stats) is missing."""


class StateError(AltogetherError):
    """Operation conflicts with current entity state (HTTP 409 analogue)."""


class TrainingDivergedError(AltogetherError):
    """Loss became non-finite; carries diagnostics for the failing step."""

    def __init__(self, step: int, batch_ids: list[str]):
        super().__init__(
            f"non-finite loss at step {step} (batch items: {', '.join(batch_ids) or 'unknown'})"
        )
        self.step = step
        self.batch_ids = batch_ids
