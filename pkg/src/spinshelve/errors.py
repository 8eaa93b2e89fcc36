"""Exception hierarchy shared by all spinshelve modules."""


class SpinShelveError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(SpinShelveError, ValueError):
    """An argument or configured value lies outside its valid domain."""


class ConfigError(SpinShelveError):
    """A configuration file is missing, unreadable or lacks a required key."""


class DegenerateSteadyStateError(SpinShelveError):
    """The rate matrix has more than one stationary distribution.

    ``classes`` lists the closed sets of levels that do not communicate.
    """

    def __init__(self, message, classes=()):
        super().__init__(message)
        self.classes = tuple(classes)


class CalibrationError(SpinShelveError):
    """No rate set satisfies the requested calibration targets."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = dict(residuals or {})


class PositivityError(SpinShelveError):
    """A propagated population fell below the hard negativity floor."""


class NotReachedError(SpinShelveError):
    """A trajectory never settles within the requested band."""

    def __init__(self, message, closest=None):
        super().__init__(message)
        self.closest = closest


class SequenceSyntaxError(SpinShelveError):
    """Malformed pulse-sequence source text."""

    def __init__(self, message, line=None, column=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


class SequenceError(SpinShelveError):
    """A structurally valid sequence that cannot be compiled or queried."""


class FitError(SpinShelveError):
    """Fitting could not be attempted (bad input or model domain)."""
