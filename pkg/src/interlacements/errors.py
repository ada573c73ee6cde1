"""Exception hierarchy shared by all modules.

The CLI maps :class:`ValidationError` to exit code 1 and
:class:`NumericalError` to exit code 2.
"""


class InterlacementError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(InterlacementError, ValueError):
    """Malformed input: bad dimension, site outside a box, bad schema..."""


class NumericalError(InterlacementError, ArithmeticError):
    """A computation left its certified domain (singular system, norm >= 1, ...)."""
