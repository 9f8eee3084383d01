"""Exception types shared across the package.

Every error raised by the public API is one of these, so callers (the
query engine, the HTTP layer) can route failures without string matching.
"""


class SketchCacheError(Exception):
    """Base class for all package errors."""


class DuplicateLabel(SketchCacheError):
    """A label name appears more than once in a series definition."""


class MismatchedConfig(SketchCacheError):
    """Two sketches with incompatible shape/seed lineage were merged."""


class EmptySketch(SketchCacheError):
    """An operation needs data but the sketch has absorbed none."""


class OutOfOrder(SketchCacheError):
    """Sample timestamp is older than the newest one already ingested."""


class Duplicate(SketchCacheError):
    """Sample timestamp equals the newest one already ingested."""


class QueryOutsideWindow(SketchCacheError):
    """Query range does not fit inside the retained sliding window."""


class EmptyWindow(SketchCacheError):
    """A window with start >= end (no interior) was supplied."""


class EmptyRange(SketchCacheError):
    """The queried sub-window contains no retained data."""


class InsufficientSamples(SketchCacheError):
    """Too few retained samples to compute the requested moment."""


class ParseError(SketchCacheError):
    """Query expression rejected; carries the offending position."""

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnsupportedFunction(SketchCacheError):
    """Function name outside the supported *_over_time set."""


class UnknownRule(SketchCacheError):
    """Rule id not present in the registry."""
