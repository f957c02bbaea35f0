"""Exception hierarchy.

Every error raised across a module boundary derives from QShieldError so
callers can catch the family; the leaf classes match the failure classes
named in the operation contracts (replay, endurance, authorization, ...).
"""


class QShieldError(Exception):
    """Base class for all framework errors."""


class ConfigurationError(QShieldError):
    """Unsupported security level or malformed configuration."""


class ContextError(QShieldError):
    """Group elements from mismatched or degenerate contexts."""


class EncodingError(QShieldError):
    """Malformed canonical encoding of a point, share or frame."""


class ArgumentError(QShieldError):
    """Precondition violation on an operation argument."""


class AuthorizationError(QShieldError):
    """Requesting user is not present in the access policy."""


class IntegrityError(QShieldError):
    """AEAD authentication failure or identifier mismatch."""


class ReplayError(QShieldError):
    """Token counter at or below the accepted floor.

    The floor is shared by all users of one core, so a fresh context can
    trip it legitimately; `floor` lets clients resync their counter.
    """

    def __init__(self, message: str, floor: int | None = None):
        super().__init__(message)
        self.floor = floor


class TokenError(QShieldError):
    """Query token failed public-key decryption or parsing."""


class EnduranceError(QShieldError):
    """Operator budget exhausted for the current session."""


class StateError(QShieldError):
    """Invalid trusted-core lifecycle transition or unknown state id."""


class ChannelError(QShieldError):
    """Provisioning payload failed channel authentication."""


class AttestationError(QShieldError):
    """Measurement of the trusted artifact does not match expectation."""


class NotFoundError(QShieldError):
    """Unknown collection, policy entry or stored document."""


class SchemaError(QShieldError):
    """Attribute set violates a collection schema."""


class PredicateError(QShieldError):
    """Ill-typed or unsupported predicate."""


class AggregateError(QShieldError):
    """Aggregate applied to an empty collection."""


class DataTypeError(QShieldError):
    """Scalar value of the wrong type for the requested operation."""


class QuerySyntaxError(QShieldError):
    """Query expression failed to parse."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at {position})")
        self.position = position


class SemanticError(QShieldError):
    """Parsed query references unknown collections or attributes."""


class AuditError(QShieldError):
    """Trust proof failed signature verification before auditing."""
