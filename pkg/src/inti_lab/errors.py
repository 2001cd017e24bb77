"""Exception types shared across the package.

The CLI maps ``ConfigError`` to exit code 2 and ``NumericError`` to exit code 3.
"""


class ConfigError(ValueError):
    """Invalid configuration: sizes, modes, schedules."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation."""


class ContractError(RuntimeError):
    """A documented precondition of an operation was violated at call time."""


class NumericError(ArithmeticError):
    """Non-finite values or a broken numeric invariant during a run."""
