"""Exception types shared across the toolkit."""


class CalibError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(CalibError, ValueError):
    """Input data violates a documented invariant."""


class ParseError(CalibError, ValueError):
    """A model completion or input line could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigurationError(CalibError):
    """Missing or inconsistent configuration (including credentials)."""


class TransportError(CalibError):
    """Network failure talking to a backend; safe to retry later."""

    retriable = True


class BackendError(CalibError):
    """Backend answered with a non-retriable error status."""

    def __init__(self, status, body):
        super().__init__(f"backend returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body
