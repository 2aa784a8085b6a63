"""Exception hierarchy shared by every racx component.

Grouping matters for the CLI exit-code contract: subclasses of DataError
map to exit 2, everything else under RacxError to exit 3.
"""


class RacxError(Exception):
    """Base class for all errors raised by this package."""


class DataError(RacxError):
    """Problems with user-supplied data or artifacts on disk."""


class DimensionError(RacxError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigurationError(RacxError):
    """Invalid configuration value (bad kernel width, k > L, ...)."""


class ContractError(RacxError):
    """A documented precondition was violated by the caller."""


class EncodingError(DataError):
    """Token id outside the embedding table."""


class InputError(DataError):
    """Unusable input document (e.g. empty after tokenization)."""


class ParseError(DataError):
    """Malformed artifact file; carries a line number where known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(DataError):
    """Structurally valid input that violates a semantic constraint."""


class DuplicateRatingError(ValidationError):
    """A rating for this (annotator, item) pair already exists."""


class GenerationError(RacxError):
    """Synthetic corpus generation cannot proceed (e.g. trigger collision)."""


class TrainingError(RacxError):
    """Training failed at runtime (divergence, non-finite gradient)."""


class CompatibilityError(DataError):
    """Checkpoint does not match the provided config or vocabularies."""


class CorruptionError(DataError):
    """Checkpoint file is damaged (bad magic, truncated payload)."""


class BuildError(RacxError):
    """Question-sheet construction could not be satisfied."""
