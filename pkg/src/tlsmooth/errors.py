"""Exception types shared across the package.

Every error raised deliberately by this package derives from
:class:`TlsmoothError`, so callers can catch one base class at the
boundary (the command line driver does exactly that). Each subclass
also inherits from the closest builtin so that generic handlers keep
working.
"""


class TlsmoothError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TlsmoothError, ValueError):
    """An argument violates an operation's preconditions."""


class UndefinedLossError(TlsmoothError, ArithmeticError):
    """A loss has no defined value, e.g. every timestep is masked."""


class UndefinedMetricError(TlsmoothError, ArithmeticError):
    """A metric is undefined for the given scored set."""


class NumericFailureError(TlsmoothError, FloatingPointError):
    """A computation produced a non-finite intermediate."""


class GenerationError(TlsmoothError, RuntimeError):
    """A synthetic cohort cannot be produced as configured."""
