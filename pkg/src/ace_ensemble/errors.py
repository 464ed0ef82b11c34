"""Exception hierarchy shared by every module."""


class AceError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(AceError, ValueError):
    pass


class DimensionError(AceError, ValueError):
    pass


class ConfigError(AceError, ValueError):
    pass


class InvalidStateError(AceError, RuntimeError):
    pass


class IdxParseError(AceError, ValueError):
    """Malformed IDX file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericError(AceError, ArithmeticError):
    """Training produced NaN/Inf or a verification check failed its tolerance."""
