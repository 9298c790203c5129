"""Exception hierarchy.  Each family carries the process exit code the CLI maps it to."""

from typing import Optional


class ForecastError(Exception):
    """Base class for every error raised by the toolkit."""

    exit_code: int = 3

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# ---------- Families ----------

class UsageError(ForecastError):
    exit_code = 1


class DataError(ForecastError):
    exit_code = 2


class NumericError(ForecastError):
    exit_code = 3


# ---------- Usage ----------

class ConfigError(UsageError):
    pass


# ---------- Data ----------

class InputNotFound(DataError):
    def __init__(self, path: str):
        super().__init__(f"Input file not found: {path}")
        self.path = path


class MalformedCsv(DataError):
    def __init__(self, detail: str, row: Optional[int] = None, col: Optional[int] = None):
        super().__init__(detail)
        self.row = row
        self.col = col


class EmptyInput(DataError):
    pass


class NonFiniteValue(DataError):
    """A NaN or infinite cell.  ``row`` is the 1-based data row, ``col`` the 1-based file column."""

    def __init__(self, row: int, col: int, detail: str = ""):
        super().__init__(detail or f"Non-finite value at row {row}, column {col}")
        self.row = row
        self.col = col


class OutOfBounds(DataError):
    pass


class WindowTooSmall(DataError):
    pass


class NonPositiveState(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class InsufficientData(DataError):
    pass


class ProtocolMismatch(DataError):
    pass


# ---------- Numeric ----------

class DegenerateWindow(NumericError):
    pass


class SingularDesign(NumericError):
    pass


class NumericFailure(NumericError):
    pass
