"""Exception hierarchy shared by every module."""

from __future__ import annotations


class RoadTopoError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(RoadTopoError):
    """Input violates a precondition (CLI exit code 1)."""


class FormatError(RoadTopoError):
    """A file on disk is not in the expected binary format (CLI exit code 2)."""


class NoLaneNearEgo(ValidationError):
    pass


class MergeCollision(ValidationError):
    pass


class TemplateOverflow(ValidationError):
    pass


class TotalConflict(ValidationError):
    pass


class CellCollision(ValidationError):
    pass


class AnchorOverflow(ValidationError):
    pass


class TooManyKeypoints(ValidationError):
    pass


class TooManyEdges(ValidationError):
    pass


class InconsistentIndex(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class SchemaViolation(ValidationError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class DuplicateName(FormatError):
    pass


class DigestMismatch(FormatError):
    pass
