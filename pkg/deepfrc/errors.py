"""Exception hierarchy shared by every deepfrc module.

Each top-level family carries the exit code the command-line tool reports
when the error escapes a subcommand:

    ConfigError     -> 2
    DataError       -> 3
    NumericalError  -> 4
"""

import typing as t


class DeepFRCError(Exception):
    """Base exception for deepfrc."""
    exit_code = 1


class ConfigError(DeepFRCError):
    """Raised when a configuration value or file is invalid."""
    exit_code = 2


class DataError(DeepFRCError):
    """Base exception for dataset content problems."""
    exit_code = 3


class DataFormatError(DataError):
    """Raised when a dataset file does not match its declared format."""

    def __init__(self, message: str, path: t.Optional[str] = None, row: t.Optional[int] = None):
        self.path = path
        self.row = row
        location = ""
        if path is not None:
            location += f"{path}"
        if row is not None:
            location += f" row {row}" if location else f"row {row}"
        super().__init__(f"{location}: {message}" if location else message)


class MissingDataError(DataError):
    """Raised when missing values remain where complete data is required."""


class InconsistentGridError(DataError):
    """Raised when samples that must share a grid do not."""


class EmptyClassError(DataError):
    """Raised when a class that must be populated has no samples."""


class NumericalError(DeepFRCError):
    """Base exception for numerical failures."""
    exit_code = 4


class ShapeError(NumericalError):
    """Raised when operand shapes do not match; names the offending node."""

    def __init__(self, message: str, node: t.Optional[str] = None):
        self.node = node
        super().__init__(f"[{node}] {message}" if node else message)


class GuardEngagedError(NumericalError):
    """Raised in strict evaluation when an epsilon guard had to clamp a value."""

    def __init__(self, message: str, node: t.Optional[str] = None):
        self.node = node
        super().__init__(f"[{node}] {message}" if node else message)


class WarpInvalidError(NumericalError):
    """Raised when a warp violates boundary or monotonicity constraints."""


class DegenerateError(NumericalError):
    """Raised when a metric is undefined on the given input (e.g. coincident means)."""


class NonFiniteGradientError(NumericalError):
    """Raised when an optimizer step receives NaN or Inf gradients."""


class DivergenceError(NumericalError):
    """Raised when training produces a non-finite loss."""

    def __init__(self, message: str, checkpoint: t.Optional[str] = None):
        self.checkpoint = checkpoint
        super().__init__(message)


class GraphStateError(DeepFRCError):
    """Raised when the differentiation API is used out of order."""
