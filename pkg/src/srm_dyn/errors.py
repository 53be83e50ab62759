"""Exception types shared across the package."""


class SrmError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SrmError, ValueError):
    pass


class DivergenceError(SrmError):
    """A simulated or integrated state left the admissible region."""


class ConstraintViolatedError(SrmError):
    """A fitted model's norm exceeds the largest grid value."""


class OracleUnavailableError(SrmError):
    """The inner supremum of a Monte-Carlo Rademacher estimate failed."""


class TrainingDivergedError(SrmError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class NumericError(SrmError):
    pass


class KernelError(SrmError):
    pass


class ConfigError(SrmError):
    pass
