"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
onto its documented codes (2 validation, 3 numerical, 4 I/O).
"""


class ChainError(Exception):
    exit_code = 3


class ValidationError(ChainError, ValueError):
    exit_code = 2


class NumericalError(ChainError, ArithmeticError):
    exit_code = 3


class KappaExceedsGamma(ValidationError):
    def __init__(self, link, kappa, gamma):
        self.link = link
        super().__init__(f"|kappa| > gamma on link {link}: |{kappa}| > {gamma}")


class LengthMismatch(ValidationError):
    pass


class NotHermitian(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class WrongModeCount(ValidationError):
    pass


class RequiresCircularZeroMean(ValidationError):
    pass


class UnsupportedInitialState(ValidationError):
    pass


class InsufficientRealizations(ValidationError):
    pass


class DimensionTooLarge(ValidationError):
    pass


class OutOfValidity(ValidationError):
    pass


class ZeroSecondMoment(ValidationError):
    pass


class WrongLayout(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class StiffnessFailure(NumericalError):
    pass


class DegenerateWithoutInit(NumericalError):
    pass


class CutoffTailTooLarge(NumericalError):
    pass


class PositivityViolation(NumericalError):
    pass


class SlowConvergenceWarning(UserWarning):
    """Steady state is approached too slowly for finite-time runs to show it."""
