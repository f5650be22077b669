"""Exception hierarchy.

Errors are grouped by the CLI exit code they map to: assumption violations
(exit 2), numerical non-convergence (exit 3) and infrared divergence (exit 4).
"""


class ReskitError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class AssumptionViolation(ReskitError):
    """A structural hypothesis on the model does not hold."""

    exit_code = 2


class NumericalFailure(ReskitError):
    """An iterative or quadrature procedure did not converge."""

    exit_code = 3


# linop
class SingularShift(NumericalFailure):
    pass


class DefectiveMatrix(NumericalFailure):
    pass


class NotSelfAdjoint(AssumptionViolation):
    pass


# feshbach
class NotNested(AssumptionViolation):
    pass


class NotInKernel(AssumptionViolation):
    pass


# resonance
class A1Violated(AssumptionViolation):
    pass


class DegenerateLevelShift(AssumptionViolation):
    pass


class LimitNotConverged(NumericalFailure):
    pass


class OutsideWindow(AssumptionViolation):
    pass


class CircleTouchesSpectrum(NumericalFailure):
    pass


class NotSeparating(NumericalFailure):
    pass


class PairingAmbiguous(NumericalFailure):
    pass


class FixedPointDiverged(NumericalFailure):
    pass


class EmptyResonanceSet(AssumptionViolation):
    pass


# propagator
class NotPartiallyStable(AssumptionViolation):
    pass


class QuadratureNotConverged(NumericalFailure):
    pass


class WindowTooSmall(NumericalFailure):
    pass


# bath
class WindowTooNarrow(AssumptionViolation):
    pass


class ClusterOutsideContinuum(AssumptionViolation):
    pass


class UnsupportedCoupling(AssumptionViolation):
    pass


# spinboson
class NonIntegrableDensity(AssumptionViolation):
    pass


class IntegralNotDamped(NumericalFailure):
    pass


class InfraredDivergent(ReskitError):
    exit_code = 4


class LabelNotInClosedSet(ReskitError):
    pass
