"""Exception hierarchy.

Validation problems derive from ``ParameterOutOfRange`` (CLI exit code 1),
numerical breakdowns from ``NumericalFailure`` (CLI exit code 2).
"""


class ArtifactError(Exception):
    pass


class ParameterOutOfRange(ArtifactError, ValueError):
    pass


class NonSummable(ParameterOutOfRange):
    pass


class Divergent(ParameterOutOfRange):
    pass


class Infeasible(ParameterOutOfRange):
    pass


class OutOfRange(ParameterOutOfRange):
    pass


class DimensionMismatch(ParameterOutOfRange):
    pass


class NumericalFailure(ArtifactError, RuntimeError):
    pass


class QuadratureFailure(NumericalFailure):
    pass


class TailTooHeavy(NumericalFailure):
    pass


class NoConvergence(NumericalFailure):
    pass


class InnerNotOrdered(NumericalFailure):
    pass


class DegenerateBranches(NumericalFailure):
    pass


class BranchLost(NumericalFailure):
    pass


class NoCrossing(NumericalFailure):
    pass


class NotEquilibrated(NumericalFailure):
    pass
