"""Exception taxonomy shared by all modules.

Every error raised by this package derives from AnalyticCilError so callers
(and the CLI) can catch one root type. Subclasses carry machine-usable
context where a contract demands it (failing pivot, row index, byte offset).
"""

from __future__ import annotations


class AnalyticCilError(Exception):
    """Root of the package exception hierarchy."""


class ShapeError(AnalyticCilError):
    """Operand dimensions are incompatible with the operation."""


class ParameterError(AnalyticCilError):
    """A scalar argument is outside its allowed range."""


class DataError(AnalyticCilError):
    """Input values violate a data contract (e.g. a label row is not one-hot)."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class DegenerateRowError(DataError):
    """A row has zero norm where a direction is required."""


class EmptyTrainingSetError(DataError):
    """The base fit was handed zero rows."""


class SingularityError(AnalyticCilError):
    """Cholesky factorization failed; the matrix is not positive definite.

    ``pivot`` is the 0-based index of the first failing pivot.
    """

    def __init__(self, message: str, pivot: int):
        super().__init__(message)
        self.pivot = pivot


class FrozenModelError(AnalyticCilError):
    """A training operation was attempted on a frozen model."""


class TrainingError(AnalyticCilError):
    """Training diverged (non-finite loss). ``epoch`` is where it happened."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class ProtocolError(AnalyticCilError):
    """An incremental-learning call was made out of order."""


class ContractViolationError(AnalyticCilError):
    """A hard runtime contract was broken (exemplar access, teacher mutation)."""


class PlanError(AnalyticCilError):
    """A phase plan cannot be built from the requested partition."""


class EvaluationError(AnalyticCilError):
    """An evaluation split is empty or otherwise unusable."""


class ConfigError(AnalyticCilError):
    """A run configuration file contains an unknown key or a bad value."""


class FileFormatError(AnalyticCilError):
    """A binary artifact file violates its format. ``offset`` is in bytes."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class BadMagicError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    pass


class LabelRangeError(FileFormatError):
    pass


class NonFiniteValueError(FileFormatError):
    pass


class ChecksumError(FileFormatError):
    pass
