"""Exception hierarchy shared by every module."""

from __future__ import annotations


class GazeQuizError(Exception):
    """Base class for all errors raised by the engine."""


# --- construction / invariant violations -------------------------------------


class InvariantError(GazeQuizError, ValueError):
    """A value object was constructed with an invariant violation."""


class NegativeTimestampError(InvariantError):
    pass


class DirectionNormError(InvariantError):
    pass


class MissingGazeDataError(InvariantError):
    pass


class AoiShapeError(InvariantError):
    pass


class DuplicateLabelError(InvariantError):
    pass


class ReservedLabelError(InvariantError):
    pass


class ConfigError(InvariantError):
    pass


class DescriptorError(InvariantError):
    """A lecture descriptor file is malformed."""


class TimelineError(InvariantError):
    def __init__(self, section_index: int, message: str):
        super().__init__(f"section {section_index}: {message}")
        self.section_index = section_index


class OverlapError(TimelineError):
    pass


class GapError(TimelineError):
    def __init__(self, section_index: int, message: str, boundary_ms: int):
        super().__init__(section_index, message)
        self.boundary_ms = boundary_ms


class OutOfRangeError(TimelineError):
    pass


# --- ingest ------------------------------------------------------------------


class IngestError(GazeQuizError):
    """Structured parse failure; ``line`` is 1-based when known."""

    line: int | None = None
    field: str | None = None

    def to_detail(self) -> dict:
        detail = {"error": type(self).__name__, "message": str(self)}
        if self.line is not None:
            detail["line"] = self.line
        if self.field is not None:
            detail["field"] = self.field
        return detail


class EncodingError(IngestError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class HeaderError(IngestError):
    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.line = 1
        self.field = column

    @property
    def column(self) -> str | None:
        return self.field


class RowError(IngestError):
    def __init__(self, line: int, field: str | None, reason: str):
        where = f"line {line}" + (f", field {field!r}" if field else "")
        super().__init__(f"{where}: {reason}")
        self.line = line
        self.field = field
        self.reason = reason


class MonotonicityError(IngestError):
    def __init__(self, line: int, t_ms: int, previous_ms: int):
        super().__init__(f"line {line}: timestamp {t_ms} precedes {previous_ms}")
        self.line = line
        self.field = "t_ms"


# --- pipeline ----------------------------------------------------------------


class UnknownLabelError(GazeQuizError):
    def __init__(self, index: int, label: str):
        super().__init__(f"sample {index}: label {label!r} is not a declared AOI")
        self.index = index
        self.label = label


class EmptyTraceError(GazeQuizError):
    pass


class InapplicableError(GazeQuizError):
    pass


class NoValidSectionError(GazeQuizError):
    pass


class EmptyPlanError(GazeQuizError):
    pass


class MissingGroundingError(GazeQuizError):
    def __init__(self, section_index: int):
        super().__init__(f"no grounding chunks for section {section_index}")
        self.section_index = section_index


class AdapterError(GazeQuizError):
    """Transport or protocol failure talking to a generation/grading backend."""


class MalformedGenerationError(GazeQuizError):
    pass


class EmptyDocumentError(GazeQuizError):
    pass


class EmptyStoreError(GazeQuizError):
    pass


class DimensionMismatchError(GazeQuizError, ValueError):
    pass
