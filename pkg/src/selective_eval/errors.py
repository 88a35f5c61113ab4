"""Exception hierarchy.

Validation problems (bad input, bad config, bad schema) derive from
``ValidationError``; backend problems that happen while talking to a judge
derive from ``BackendError``. The CLI maps the two families to exit codes 1
and 2 respectively.
"""

from __future__ import annotations


class SelectiveEvalError(Exception):
    """Base class for all package errors."""


class ValidationError(SelectiveEvalError):
    """Input violates a documented precondition."""


class DomainError(ValidationError, ValueError):
    """A value lies outside the domain of an operation."""


class ConfigError(ValidationError):
    """Invalid or inconsistent configuration."""


class SchemaError(ValidationError):
    """A file does not match its declared schema."""


class DigestMismatchError(ConfigError):
    """A prediction cache was produced under a different shot plan."""


class BackendError(SelectiveEvalError):
    """A judge backend could not produce a label distribution."""


class CacheMissError(BackendError):
    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(f"({i}, {j}, {a})" for i, j, a in self.missing[:20])
        more = "" if len(self.missing) <= 20 else f" ... and {len(self.missing) - 20} more"
        super().__init__(f"prediction cache is missing {len(self.missing)} key(s): {shown}{more}")


class TransportError(BackendError):
    def __init__(self, message, status=None):
        self.status = status
        super().__init__(message if status is None else f"{message} (last status {status})")


class ResponseFormatError(BackendError):
    """The provider answered, but the answer cannot be turned into a distribution."""
