class PCBoundsError(Exception):
    """Base class for every error raised by pcbounds."""


class ValidationError(PCBoundsError, ValueError):
    """
    Input failed validation.

    Parameters
    ----------
    message : str
        Human readable diagnostic.
    field : str, optional
        Name of the offending field, when there is one.
    record : int, optional
        Zero-based index of the offending record in a multi-record input.
    """

    def __init__(self, message: str, field: str = None, record: int = None):
        super().__init__(message)
        self.field = field
        self.record = record


class InvalidProbability(ValidationError):
    pass


class UndefinedRatio(ValidationError):
    pass


class DegenerateConditioning(ValidationError):
    pass


class DegenerateTheta(ValidationError):
    pass


class ZeroCell(ValidationError):
    pass


class RetrospectiveDesign(ValidationError):
    pass


class ZeroRow(ValidationError):
    pass


class ZeroBaselineRisk(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(
        self,
        message: str,
        line: int = None,
        column: int = None,
        field: str = None,
        record: int = None,
    ):
        super().__init__(message, field=field, record=record)
        self.line = line
        self.column = column


class InvalidSpec(ValidationError):
    pass


class TooFewDraws(ValidationError):
    pass


class EmptyGrid(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class NoExposedResponders(ValidationError):
    pass


class EmptyArm(ValidationError):
    pass


class ArtifactIOError(PCBoundsError, OSError):
    """Reading or writing an artifact on disk failed."""
