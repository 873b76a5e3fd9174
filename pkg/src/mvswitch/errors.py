"""Exception hierarchy shared by every module of the package."""


class ModelError(ValueError):
    """Base class for invalid models, inputs and numerical failures."""


# generator algebra
class NegativeOffDiagonal(ModelError):
    pass


class RowSumNonzero(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class NonpositiveEpsilon(ModelError):
    pass


class NotIrreducible(ModelError):
    pass


class SingularSystem(ModelError):
    pass


class NotHurwitz(ModelError):
    pass


class MissingRegime(ModelError):
    pass


# Riccati solvers
class DegenerateVolatility(ModelError):
    pass


class BoundViolation(ModelError):
    pass


class NonconformingGrid(ModelError):
    pass


class GridMismatch(ModelError):
    pass


# control synthesis
class TransientRegime(ModelError):
    pass


class RegimeOutOfRange(ModelError):
    pass


class DegenerateSlope(ModelError):
    pass


# simulation
class NonfiniteState(ModelError):
    pass


class UnknownRegime(ModelError):
    pass


# experiment harness
class InsufficientSamples(ModelError):
    pass


class WindowOutOfRange(ModelError):
    pass


# configuration / CLI
class ParseError(ModelError):
    pass


class ValidationError(ModelError):
    pass
