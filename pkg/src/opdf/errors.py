"""Exception hierarchy.

Validation errors map to CLI exit code 2, numerical errors to exit code 3.
"""


class OpdfError(Exception):
    exit_code = 3


class ValidationError(OpdfError, ValueError):
    exit_code = 2


class NumericalError(OpdfError, ArithmeticError):
    exit_code = 3


# tensor-core
class ExtentMismatch(ValidationError):
    pass


class InvalidPermutation(ValidationError):
    pass


class FormatError(ValidationError):
    pass


# linalg
class ConvergenceFailure(NumericalError):
    pass


# mpo
class DimProductMismatch(ValidationError):
    pass


class EmptyFactorization(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class BondMismatch(ValidationError):
    pass


# autodiff
class NonScalarLoss(ValidationError):
    pass


class LabelOutOfRange(ValidationError):
    pass


class NonPositiveTemperature(ValidationError):
    pass


# distill
class NoMatchableLayers(ValidationError):
    pass


class PlanMismatch(ValidationError):
    pass


class DataShapeMismatch(ValidationError):
    pass


# harness
class ConfigError(ValidationError):
    pass


class UnknownGenerator(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class NonNumericFeature(ParseError):
    pass


class EmptyDataset(ValidationError):
    pass


class MissingSummary(ValidationError):
    pass
