"""Exception hierarchy shared by all modules."""


class MaglabError(Exception):
    """Base class for every error raised by maglab."""


class ConfigurationError(MaglabError, ValueError):
    """Inputs violate a precondition or a type invariant."""


class DomainError(MaglabError, ValueError):
    """An argument lies outside the domain of the operation (e.g. |t| >= T)."""


class DataError(MaglabError, ValueError):
    """Data are inconsistent with a required compatibility condition."""


class NumericalError(MaglabError, RuntimeError):
    """A solver failed to reach its tolerance.

    ``residual`` carries the last relative residual when available.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InvariantViolation(MaglabError, RuntimeError):
    """A checked inequality or identity failed in a way that should be impossible."""
