"""Exception types shared by all modules."""


class ObsentError(Exception):
    """Base class for all package errors."""


class ConvergenceFailure(ObsentError):
    """An eigendecomposition or iterative solver did not converge."""


class DimensionMismatch(ObsentError):
    """Operator/state dimensions are incompatible."""


class NotHermitian(ObsentError):
    """Matrix fails the Hermiticity tolerance."""


class NotADensityMatrix(ObsentError):
    """Trace or positivity invariant violated."""


class NotOrthonormal(ObsentError):
    """A vector family fails the Gram-identity tolerance."""


class NonCommuting(ObsentError):
    """Two observables required to commute do not."""


class NotNormalized(ObsentError):
    """A probability distribution does not sum to one."""


class InfiniteDivergence(ObsentError):
    """Relative entropy support condition failed (value is +infinity)."""


class UnknownOutcome(ObsentError):
    """Requested outcome label does not exist in the coarse-graining."""


class EnergyOutOfRange(ObsentError):
    """Target energy lies outside the operator's spectral range."""


class Unsolvable(ObsentError):
    """The (beta*, mu*) solver exhausted its iteration budget."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class WrongLabelKind(ObsentError):
    """Coarse-graining labels are not of the kind the operation needs."""


class GridMismatch(ObsentError):
    """A time grid does not line up with the protocol steps."""


class SaturatedTemperature(ObsentError):
    """A Clausius integral received a saturated effective temperature."""


class LengthMismatch(ObsentError):
    """Parallel lists have different lengths."""


class SupportMismatch(ObsentError):
    """Two outcome distributions are not over the same outcome set."""


class PreconditionViolated(ObsentError):
    """A theorem's precondition failed; the asserted identity is void."""


class LabelMismatch(ObsentError):
    """Two two-point distributions do not share an outcome-pair set."""


class InvalidInitialState(ObsentError):
    """Initial state violates a run's precondition."""


class NonConserving(ObsentError):
    """The full Hamiltonian does not conserve the total particle number."""


class SpecInvalid(ObsentError):
    """A model specification is internally inconsistent."""


class ConfigInvalid(ObsentError):
    """An experiment configuration failed validation."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
