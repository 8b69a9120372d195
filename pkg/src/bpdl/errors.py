"""Exception hierarchy.

Two families: ``ValidationError`` for bad inputs or configs (CLI exit code 1)
and ``NumericalError`` for solver or budget failures (CLI exit code 2).
"""


class BPDLError(Exception):
    """Base class for all package errors."""


class ValidationError(BPDLError, ValueError):
    pass


class NumericalError(BPDLError, ArithmeticError):
    pass


# input validation
class NonSquareError(ValidationError):
    pass


class NegativeEntryError(ValidationError):
    pass


class NonzeroDiagonalError(ValidationError):
    pass


class DimensionMismatchError(ValidationError):
    pass


class NegativeArgumentError(ValidationError):
    pass


class ZeroMassError(ValidationError):
    pass


class NotAbsolutelyContinuousError(ValidationError):
    pass


class EmptyEnsembleError(ValidationError):
    pass


class SpaceTooLargeError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


# numerical failures
class NonConvergenceError(NumericalError):
    pass


class StepUnderflowError(NumericalError):
    pass


class StepTooLargeError(NumericalError):
    pass


class InfiniteInitialEnergyError(NumericalError):
    pass


class DensityZeroOnFluxSupportError(NumericalError):
    pass


class RateOverflowError(NumericalError):
    pass


class TruncationLeakError(NumericalError):
    pass


class DominationFailureError(NumericalError):
    pass


class TailBudgetExceededError(NumericalError):
    pass
