"""Exception hierarchy shared across the package."""


class UtilcalError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(UtilcalError):
    """Input data violates a fatal validation threshold."""


class DomainError(UtilcalError):
    """An argument falls outside an operation's contract."""


class GuardError(UtilcalError):
    """A size guard on a brute-force oracle was exceeded."""


class ConfigError(UtilcalError):
    """A run configuration value is unusable."""


class ParseError(UtilcalError):
    """An input file could not be parsed; message carries a location."""
