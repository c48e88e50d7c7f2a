"""Exception hierarchy.

``DataError`` covers malformed or inconsistent inputs (CLI exit code 2);
``NumericalError`` covers numerical breakdowns such as a disconnected
affinity graph (CLI exit code 3).
"""

from __future__ import annotations


class SleepGeomError(Exception):
    """Base class for all package errors."""


class DataError(SleepGeomError, ValueError):
    """Input data is malformed or violates a precondition."""


class EDFError(DataError):
    """EDF/EDF+ parse failure.

    ``offset`` is the byte offset of the offending field when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class HypnogramError(DataError):
    pass


class SilentEpochError(DataError):
    """An epoch has zero in-band energy, so band ratios are undefined."""


class NumericalError(SleepGeomError, ArithmeticError):
    pass


class DegeneratePointCloudError(NumericalError):
    pass


class DisconnectedGraphError(NumericalError):
    pass
