"""Exception types raised across the package.

Each class carries the CLI exit code it maps to, so the command line layer
never has to special-case individual errors.
"""


class UFilterError(Exception):
    exit_code = 1


class InvalidArgumentError(UFilterError, ValueError):
    exit_code = 2


class ConfigError(InvalidArgumentError):
    """Raised with a list of field-level messages."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class InvalidChannelError(InvalidArgumentError):
    pass


class NonInvertibleChannelError(InvalidChannelError):
    pass


class EmptyClassError(InvalidArgumentError):
    """The floor is too large for any stochastic row to satisfy it."""


class InsufficientDataError(InvalidArgumentError):
    pass


class UnsupportedSourceError(InvalidArgumentError):
    pass


class StateError(UFilterError, RuntimeError):
    pass


class NumericalError(UFilterError, ArithmeticError):
    exit_code = 3


class CapacityError(UFilterError, MemoryError):
    exit_code = 4
