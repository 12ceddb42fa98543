"""Shared exception types."""


class RiskforgeError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(RiskforgeError):
    """A document could not be decoded at all (bad JSON, wrong type)."""


class ValidationError(RiskforgeError):
    """A decoded document violates an invariant.

    The message always names the offending field, e.g.
    ``"agent a3: track times not increasing"``.
    """
