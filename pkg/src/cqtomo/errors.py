"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:
2 for configuration problems, 3 for I/O, 4 for numerical failures.
"""


class CQTError(Exception):
    exit_code = 4


class StructureError(CQTError, ValueError):
    """A matrix failed a structure predicate (hermitean, unitary, ...)."""


class DimensionError(StructureError):
    pass


class SingularDerivative(CQTError):
    """``dexp`` is not invertible: an eigenvalue gap lies in 2*pi*Z \\ {0}."""

    def __init__(self, gap, value):
        self.gap = float(gap)
        self.value = float(value)
        super().__init__(f"dexp is singular: eigenvalue gap {self.gap:.12g} gives |phi(i*gap)| = {self.value:.3e}")


class AmbiguousClustering(CQTError):
    pass


class NoIntersection(CQTError):
    pass


class OutOfDomain(CQTError):
    pass


class UnknownPhantom(CQTError):
    exit_code = 2


class InvalidInterval(CQTError, ValueError):
    pass


class DegenerateColumn(CQTError):
    pass


class InconsistentOracle(CQTError):
    pass


class BranchJump(CQTError):
    pass


class NonGeneric(CQTError):
    pass


class InsufficientAngles(CQTError):
    pass


class NonInvertibleWeight(CQTError):
    pass


class TooManySkipped(CQTError):
    pass


class Diverged(CQTError):
    pass


class WeightDegenerate(CQTError):
    pass


class ConfigError(CQTError):
    exit_code = 2


class DataIOError(CQTError):
    exit_code = 3


class AliasWarning(UserWarning):
    """Spectral energy near the edge of the padded grid; output may alias."""
