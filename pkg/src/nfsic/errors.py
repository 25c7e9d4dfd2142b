"""Exception types raised by the library."""


class NfsicError(ValueError):
    """Base class for all errors raised by this package."""


class InputError(NfsicError):
    """Invalid argument: wrong shape, out-of-range value, non-finite data."""


class DegenerateInputError(NfsicError):
    """Input is well-formed but carries no usable information (e.g. all points equal)."""


class SingularCovarianceError(NfsicError):
    """The regularized covariance could not be factorized."""


class DomainError(NfsicError):
    """A formula was evaluated outside the range where it is stated."""
