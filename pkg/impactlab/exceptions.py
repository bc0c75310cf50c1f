"""Custom exceptions for impactlab.

Each exception family maps to a specific exit code, enabling clean error
propagation from any module to the command line and the pipeline
orchestrator.
"""

from .constants import ExitCode


class ImpactLabError(Exception):
    """Base exception for all impactlab errors."""

    exit_code: ExitCode = ExitCode.ANALYSIS_ERROR


class ConfigError(ImpactLabError):
    """Configuration is invalid.

    Carries every problem found, not just the first one.

    Maps to ExitCode.CONFIG_ERROR (2).

    Args:
        errors: One human-readable message per problem.
    """

    exit_code = ExitCode.CONFIG_ERROR

    def __init__(self, errors: list[str]) -> None:
        self.errors = list(errors)
        super().__init__("; ".join(self.errors) if self.errors else "invalid configuration")


class DataIntegrityError(ImpactLabError):
    """Input data violates the event schema or the book state.

    Maps to ExitCode.DATA_INTEGRITY (3).
    """

    exit_code = ExitCode.DATA_INTEGRITY


class EventParseError(DataIntegrityError):
    """A record of the event stream is malformed.

    Args:
        message: What is wrong with the record.
        position: 1-based line number (text) or byte offset (binary).
        unit: "line" or "offset".
    """

    def __init__(self, message: str, position: int, unit: str = "line") -> None:
        self.position = position
        self.unit = unit
        super().__init__(f"{unit} {position}: {message}")


class OrderingError(DataIntegrityError):
    """A time series is not sorted by timestamp."""


class UnknownOrderError(DataIntegrityError):
    """An event references an order id with no resting order."""


class CrossedBookError(DataIntegrityError):
    """An add would leave the best bid at or above the best ask."""


class AlignmentError(DataIntegrityError):
    """Two series that must be aligned have different lengths."""


class ConvergenceError(ImpactLabError):
    """An iterative method hit its iteration cap.

    Maps to ExitCode.NON_CONVERGENCE (4).
    """

    exit_code = ExitCode.NON_CONVERGENCE


class AnalysisError(ImpactLabError):
    """A numerical precondition does not hold.

    Maps to ExitCode.ANALYSIS_ERROR (1).
    """


class DegenerateSeriesError(AnalysisError):
    """A series or sample has zero spread and cannot be standardized."""


class DomainError(AnalysisError):
    """A parameter or matrix entry is outside the valid domain."""


class IncompatibleMatricesError(AnalysisError):
    """Matrices of different kinds or shapes were combined."""


class EmptyResultError(AnalysisError):
    """Every entry of a result is missing."""


class CalibrationError(AnalysisError):
    """A synthetic-market target cannot be reached."""


class StageError(ImpactLabError):
    """A pipeline stage failed.

    Names the stage and the pair or matrix being processed; the exit code
    is inherited from the underlying cause.

    Args:
        stage: Pipeline stage name (e.g. 'respond').
        identity: The pair or matrix being processed, if known.
        cause: The original exception.
    """

    def __init__(self, stage: str, identity: str | None, cause: BaseException) -> None:
        self.stage = stage
        self.identity = identity
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", ExitCode.ANALYSIS_ERROR)
        where = f" [{identity}]" if identity else ""
        super().__init__(f"stage '{stage}'{where} failed: {cause}")
