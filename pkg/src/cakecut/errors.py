"""Exception hierarchy shared by every cakecut module."""


class CakeError(Exception):
    """Base class for all cakecut errors."""


class DomainError(CakeError, ValueError):
    """An argument lies outside the domain of an operation."""


class InsufficientMass(DomainError):
    """A cut query asked for more mass than is left to the right of x."""


class ConfigError(CakeError, ValueError):
    pass


class PartitionError(CakeError, ValueError):
    pass


class SingularError(CakeError, ArithmeticError):
    """Matrix is numerically singular (pivot ratio or sigma_n/sigma_1 below 1e-12)."""


class ConvergenceError(CakeError, ArithmeticError):
    pass


class InvariantViolation(CakeError, AssertionError):
    pass


class ResourceError(CakeError, RuntimeError):
    """A protocol would exceed a configured resource cap."""


class SingularWitnessMatrix(CakeError):
    """The witness matrix stayed singular after the jittered retry.

    ``matrices`` and ``sigmas`` hold every witness matrix tried and its
    smallest singular value, in order.
    """

    def __init__(self, message, matrices=(), sigmas=(), partitions=()):
        super().__init__(message)
        self.matrices = list(matrices)
        self.sigmas = list(sigmas)
        self.partitions = list(partitions)
