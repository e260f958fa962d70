"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ``FormatError`` -> 2, ``NumericError`` -> 3,
everything else derived from ``SesdiError`` -> 2 unless it is a usage problem.
"""


class SesdiError(Exception):
    pass


class ShapeError(SesdiError, ValueError):
    pass


class ParameterError(SesdiError, ValueError):
    pass


class PlacementError(ParameterError):
    """A source or receiver falls outside the non-absorbing interior."""


class EmptyContextError(SesdiError, ValueError):
    pass


class DatasetError(SesdiError):
    pass


class InferenceError(SesdiError):
    pass


class FormatError(SesdiError):
    """Bad magic, version, CRC, or truncated payload in a binary file."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class NumericError(SesdiError, ArithmeticError):
    pass


class CFLViolation(NumericError):
    def __init__(self, dt, limit):
        self.dt = dt
        self.limit = limit
        super().__init__(f"time step {dt:.6g} s exceeds CFL limit {limit:.6g} s")


class DivergenceError(NumericError):
    pass
