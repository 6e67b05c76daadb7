"""Error hierarchy. ValidationError maps to CLI exit code 2, NumericError to 3."""


class KernelCompError(Exception):
    exit_code = 1


class ValidationError(KernelCompError, ValueError):
    exit_code = 2


class NumericError(KernelCompError, ArithmeticError):
    exit_code = 3


class InvalidGridError(ValidationError):
    pass


class InvalidDomainError(ValidationError):
    pass


class InfeasibleBandError(ValidationError):
    def __init__(self, message: str, minimal_m: int):
        super().__init__(message)
        self.minimal_m = minimal_m


class InvalidInputError(ValidationError):
    pass


class InvalidContractionError(ValidationError):
    pass


class CoverageError(ValidationError):
    pass


class EmptyEstimateError(ValidationError):
    pass


class UndefinedMetricError(ValidationError):
    pass


class InvalidConfigError(ValidationError):
    pass


class DegenerateOperatorError(NumericError):
    pass


class NotPSDError(NumericError):
    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class NonFiniteError(NumericError):
    pass
