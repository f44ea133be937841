"""Exception types raised across the package."""


class PantsBenchError(Exception):
    """Base class for all package errors."""


class ConfigError(PantsBenchError):
    pass


class NotNearIdentity(PantsBenchError):
    pass


class NoConvergence(PantsBenchError):
    pass


class DimensionTooSmall(PantsBenchError):
    pass


class LogDivergence(PantsBenchError):
    pass


class NotOrthogonal(PantsBenchError):
    pass


class NotLorentz(PantsBenchError):
    pass


class NotLoxodromic(PantsBenchError):
    pass


class Identical(PantsBenchError):
    pass


class Asymptotic(PantsBenchError):
    pass


class Intersecting(PantsBenchError):
    pass


class AngleTooSharp(PantsBenchError):
    pass


class AntipodalFeet(PantsBenchError):
    pass


class PreconditionError(PantsBenchError):
    """Inputs violate the stated hypothesis of an estimate."""


class Degenerate(PantsBenchError):
    pass


class DegenerateTheta(PantsBenchError):
    pass


class InvolutionClash(PantsBenchError):
    pass


class InconsistentGeometry(PantsBenchError):
    pass


class AcceptanceTooLow(PantsBenchError):
    pass


class MeshTooCoarse(PantsBenchError):
    pass


class UnmatchedBoundary(PantsBenchError):
    pass


class NoInput(PantsBenchError):
    pass


class AntipodalOrFar(PantsBenchError):
    pass
