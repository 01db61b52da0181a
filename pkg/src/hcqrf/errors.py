"""Exception hierarchy shared across the package.

The CLI maps each family to an exit code: parse errors exit 2, data errors
exit 3 and numerical failures exit 4.
"""


class HcqrfError(Exception):
    """Base class for all package errors."""


class DataError(HcqrfError, ValueError):
    """Malformed or invalid input data."""


class ParseError(DataError):
    """A CSV cell or column could not be interpreted.

    Carries the offending ``row`` (1-based data row, header excluded) and
    ``column`` when they are known.
    """

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalError(HcqrfError, ArithmeticError):
    """A numerical routine could not produce a valid answer."""


class DegenerateDesignError(NumericalError):
    """The design restricted to positive-weight rows is rank deficient."""


class InsufficientSampleError(NumericalError):
    """Too few positive-weight rows to identify the coefficients."""


class NoOOBTreesError(NumericalError):
    """No tree in the ensemble has the requested row out of bag."""
