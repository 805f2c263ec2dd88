"""Exception hierarchy shared across the package."""


class AlmpcError(Exception):
    """Base class for every error raised by almpc."""


# numerics
class DimensionMismatch(AlmpcError, ValueError):
    pass


class Infeasible(AlmpcError):
    pass


class Unbounded(AlmpcError):
    pass


class MaxIterations(AlmpcError):
    pass


class UnstableMatrix(AlmpcError):
    pass


class NotStabilizable(AlmpcError):
    pass


# polytope
class EmptySet(AlmpcError):
    pass


class UnboundedSet(AlmpcError):
    pass


class NonPositiveScale(AlmpcError, ValueError):
    pass


# plant
class NotObservable(AlmpcError):
    pass


class NotControllable(AlmpcError):
    pass


class RankDeficient(AlmpcError):
    pass


# environment
class NoUniqueExtremum(AlmpcError):
    pass


class UnknownScenario(AlmpcError, KeyError):
    pass


# excitation
class UnsupportedOrder(AlmpcError, ValueError):
    pass


class HorizonMismatch(AlmpcError, ValueError):
    pass


class NoPreviousSolution(AlmpcError):
    pass


# terminal
class SynthesisFailed(AlmpcError):
    pass


# simulator / cli
class InfeasibleAbort(AlmpcError):
    pass


class SchemaMismatch(AlmpcError):
    pass


class ConfigError(AlmpcError):
    pass
