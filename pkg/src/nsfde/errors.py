"""Exception hierarchy shared by all modules."""


class NsfdeError(Exception):
    """Base class for every error raised by the package."""


class DomainError(NsfdeError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class FactorizationError(NsfdeError, ArithmeticError):
    """Symmetric factorization hit a negative pivot that flooring cannot absorb."""

    def __init__(self, message, index=None, pivot=None):
        super().__init__(message)
        self.index = index
        self.pivot = pivot


class SolverError(NsfdeError, ArithmeticError):
    """The time stepper could not advance (e.g. neutral sub-iteration stalled)."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class InsufficientDataError(NsfdeError, ValueError):
    """Too few usable points for a regression."""


class HypothesisError(NsfdeError):
    """A standing hypothesis (H.1)-(H.6) fails for the supplied configuration."""

    def __init__(self, hypothesis, message):
        super().__init__(f"{hypothesis}: {message}")
        self.hypothesis = hypothesis


class ConfigError(NsfdeError, ValueError):
    """Experiment configuration is malformed."""
