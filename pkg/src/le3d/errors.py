"""Exception hierarchy shared by all le3d components."""


class Le3dError(Exception):
    """Base class for all errors raised by this package."""


class InputError(Le3dError):
    """A caller-supplied value violates an operation's preconditions."""


class ConfigError(Le3dError):
    """A configuration value is missing, malformed, or out of range."""


class ConflictError(Le3dError):
    """An operation collides with existing state (e.g. duplicate id)."""


class RoutingError(Le3dError):
    """A message arrived for a stream or entity nobody registered."""


class NotFoundError(Le3dError):
    """A referenced entity, stream, or record does not exist."""


class DecodeError(Le3dError):
    """Wire payload could not be decoded into a known message."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class TransportUnavailable(Le3dError):
    """The messaging plane cannot accept a publish right now."""
