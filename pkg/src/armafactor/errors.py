"""Exception types raised by the identification pipeline."""


class ArmaFactorError(Exception):
    """Base class for numerical failures (CLI exit code 2)."""


class NotPositiveDefinite(ArmaFactorError):
    pass


class DegenerateSpectrum(ArmaFactorError):
    pass


class InsufficientData(ArmaFactorError):
    pass


class FactorizationDiverged(ArmaFactorError):
    pass


class BlockNotPD(ArmaFactorError):
    pass


class InfeasibleStart(ArmaFactorError):
    pass


class MaxItersExceeded(ArmaFactorError):
    pass


class BracketInvalid(ArmaFactorError):
    pass


class RecoveryInconsistent(ArmaFactorError):
    pass


class SingularNormalEquations(ArmaFactorError):
    pass


class SingularFactor(ArmaFactorError):
    pass


class UnstableAR(ArmaFactorError):
    pass


class ZeroVarianceChannel(ArmaFactorError):
    pass


class QuantileUnstable(UserWarning):
    """Too few Monte Carlo trials for a reliable quantile."""


class UnstableARWarning(UserWarning):
    pass


class DeltaTooLarge(UserWarning):
    """The estimated radius reaches the trivial-solution bound."""
