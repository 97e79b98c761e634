"""Exception hierarchy shared by all modules."""


class CdalError(ValueError):
    """Base class for every error raised by this package."""


class DimensionMismatch(CdalError):
    pass


class NonFiniteEntry(CdalError):
    pass


class UnsupportedShape(CdalError):
    pass


class BoundOrderViolation(CdalError):
    pass


class NegativeWeight(CdalError):
    pass


class LengthMismatch(CdalError):
    pass


class NonPositiveRho(CdalError):
    pass


class ZeroDiagonal(CdalError):
    pass


class IndexOutOfRange(CdalError):
    pass


class InfeasibleWarmStart(CdalError):
    pass


class ConfigError(CdalError):
    pass


class RankDeficient(CdalError):
    pass


class MaxIterationsExceeded(CdalError):
    pass


class TooLarge(CdalError):
    pass


class EmptyRange(CdalError):
    pass


class EmptyLog(CdalError):
    pass
