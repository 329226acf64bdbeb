"""Exception hierarchy.

Every error raised on purpose by the package derives from ``MediationError``
so callers (the CLI in particular) can map families of failures to exit codes.
"""


class MediationError(Exception):
    """Base class for all package errors."""


# -- input ------------------------------------------------------------------

class InputError(MediationError):
    """Bad user input: data files, configuration, requests."""


class InvalidDataError(InputError):
    pass


class MissingColumnError(InputError):
    def __init__(self, name):
        super().__init__(f"column {name!r} not found in header")
        self.name = name


class _CellError(InputError):
    what = "bad cell"

    def __init__(self, row, col, value=None):
        msg = f"{self.what} at line {row}, column {col!r}"
        if value is not None:
            msg += f": {value!r}"
        super().__init__(msg)
        self.row = row
        self.col = col


class MissingValueError(_CellError):
    what = "missing value"


class NonNumericCellError(_CellError):
    what = "non-numeric value"


class NonBinaryValueError(_CellError):
    what = "value outside {0, 1} in a binary column"


class InvalidFlavorError(InputError):
    pass


class ConfigError(InputError):
    """A scenario or analysis configuration failed validation."""


# -- model fitting -----------------------------------------------------------

class FitError(MediationError):
    pass


class RankDeficientError(FitError):
    pass


class SeparationError(FitError):
    pass


class NonConvergenceError(FitError):
    pass


class MissingSigma2Error(MediationError):
    pass


# -- measures and inference --------------------------------------------------

class NodeCountError(MediationError):
    pass


class UndefinedMPError(MediationError):
    pass


class NonFiniteGradientError(MediationError):
    pass


class BootstrapInstabilityError(MediationError):
    pass


# -- simulation --------------------------------------------------------------

class SolverFailureError(MediationError):
    pass


class TooManyFailuresError(MediationError):
    pass
