"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition (shape, range, size)."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value.

    ``where`` names the location (layer or iteration index) when known.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class ParseError(ValueError):
    """A binary or text input file is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ValueError):
    """A run configuration is invalid or inconsistent."""
