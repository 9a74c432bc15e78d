"""Exception hierarchy shared by every module."""


class OdedError(Exception):
    """Base class for all package errors."""


class ConfigError(OdedError, ValueError):
    """Invalid or inconsistent configuration (spec, prior, design, run config)."""


class DomainError(OdedError, ValueError):
    """Argument outside the domain of a model function."""


class EvaluationError(OdedError, ArithmeticError):
    """A numerical evaluation produced a non-finite value."""

    def __init__(self, message, params=None):
        super().__init__(message)
        self.params = params


class InferenceError(OdedError, RuntimeError):
    """Mode finding failed after all restarts."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class EstimationError(OdedError, RuntimeError):
    """Every Monte Carlo sample of an expected-utility estimate failed."""
