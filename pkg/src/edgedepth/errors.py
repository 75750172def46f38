"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation."""


class NumericError(ArithmeticError):
    """A non-finite value entered or left a computation."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class EmptyMaskError(ValueError):
    """No valid pixels remain to compute a loss or metric over."""


class DomainError(ValueError):
    """A value lies outside the domain of a function (e.g. log of a nonpositive depth)."""


class FormatError(ValueError):
    """A binary file is malformed.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
