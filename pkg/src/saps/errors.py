"""Exception taxonomy shared by all modules."""


class SapsError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SapsError, ValueError):
    """A precondition on inputs or configuration does not hold."""


class ConfigurationError(ValidationError):
    """A run configuration is internally inconsistent (e.g. zero-bandwidth link in use)."""


class InvariantViolation(SapsError):
    """A structural invariant (e.g. double stochasticity) failed a check."""


class ProtocolError(SapsError):
    """A peer or worker violated the message protocol."""


class BadMagicError(ProtocolError):
    """Frame does not start with the expected magic bytes."""


class BadVersionError(ProtocolError):
    """Frame carries an unsupported protocol version."""


class TruncatedFrameError(ProtocolError):
    """Frame is shorter than its header or declared length."""


class ChecksumError(ProtocolError):
    """Frame checksum does not match its contents."""


class TransportError(SapsError):
    """The underlying byte transport failed (connection loss, timeout)."""


class NumericalError(SapsError):
    """A numerical routine produced non-finite values or failed to converge."""
