"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to.
"""


class RecoError(Exception):
    exit_code = 1


class ParameterError(RecoError, ValueError):
    """Invalid argument or configuration value."""

    exit_code = 2


class ConfigError(ParameterError):
    exit_code = 2


class DataError(RecoError):
    """Dataset missing, unreadable, or malformed."""

    exit_code = 3


class ContractError(RecoError):
    """A caller violated a documented precondition (norms, branch tags, ratios)."""

    exit_code = 2


class StateError(RecoError):
    exit_code = 2


class NumericError(RecoError, ArithmeticError):
    exit_code = 4


class DegeneratePairError(NumericError):
    """Feature interpolation collapsed to (near) zero norm."""


class InvariantViolation(RecoError, AssertionError):
    exit_code = 5
