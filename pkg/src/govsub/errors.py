"""Exception hierarchy shared by every layer of the engine."""


class GovsubError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GovsubError, ValueError):
    """An input value violates a type invariant."""


class StateError(GovsubError):
    """An operation is illegal in the current state (duplicate id, bad transition)."""


class NotFound(GovsubError, LookupError):
    """A referenced entity does not exist (or must look as if it does not)."""


class AuthorizationError(GovsubError):
    """The caller is not allowed to perform the operation."""


class AccessDenied(AuthorizationError, NotFound):
    """Read denied by policy. Indistinguishable from a missing entity on purpose."""


class SsrfError(ValidationError):
    """A webhook target resolves to a non-public address."""
