"""Exception types raised across the package."""


class PricingError(Exception):
    """Base class for all package errors."""


class ValidationError(PricingError, ValueError):
    """Invalid parameters or configuration.

    ``errors`` holds one message per offending field when several problems
    are collected at once.
    """

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors else [message]


class DomainError(PricingError, ValueError):
    """A value left the interval where a function is defined."""


class BracketError(DomainError):
    """The virtual-valuation inverse has no root in the search bracket."""


class ConvergenceError(PricingError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class ConsistencyError(PricingError, ValueError):
    """Realized demands do not match the selling strategy."""


class UnsupportedError(PricingError, NotImplementedError):
    """Operation not available for the given feature source."""


class ParseError(PricingError, ValueError):
    """A config file could not be read or parsed."""


class DegenerateError(PricingError, ValueError):
    """Input series cannot support the requested fit."""


class EpisodeError(PricingError, RuntimeError):
    """An episode failed; carries the period index where it happened."""

    def __init__(self, message, period=None):
        super().__init__(message if period is None else f"period {period}: {message}")
        self.period = period
