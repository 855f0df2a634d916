"""Exception types raised across the package."""


class EllipticBayesError(Exception):
    """Base class for all package errors."""


class InvalidResolution(EllipticBayesError, ValueError):
    pass


class ResolutionTooCoarse(EllipticBayesError, ValueError):
    pass


class PointOutsideDomain(EllipticBayesError, ValueError):
    pass


class NormalizationFailure(EllipticBayesError, RuntimeError):
    pass


class ValueBelowKmin(EllipticBayesError, ValueError):
    pass


class NonPositiveConductivity(EllipticBayesError, ValueError):
    pass


class SolverDivergence(EllipticBayesError, RuntimeError):
    pass


class QuadratureNonConvergence(EllipticBayesError, RuntimeError):
    pass


class UnsupportedLevel(EllipticBayesError, ValueError):
    pass


class VariantMismatch(EllipticBayesError, TypeError):
    pass


class EmptyChain(EllipticBayesError, ValueError):
    pass


class SamplerStalled(EllipticBayesError, RuntimeError):
    """Raised when the pCN step has shrunk to its floor and nothing is accepted."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class DomainViolation(EllipticBayesError, ValueError):
    pass


class InsufficientPoints(EllipticBayesError, ValueError):
    pass


class NonPositiveError(EllipticBayesError, ValueError):
    pass


class DegenerateDenominator(EllipticBayesError, ZeroDivisionError):
    pass


class ConfigError(EllipticBayesError, ValueError):
    pass
