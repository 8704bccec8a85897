"""Exception hierarchy shared by every module of the package."""


class SgfluidError(Exception):
    """Base class for all package errors."""


class InvalidCutoff(SgfluidError, ValueError):
    pass


class LatticeMismatch(SgfluidError, ValueError):
    pass


class DegenerateInput(SgfluidError, ValueError):
    pass


class NoiseDegenerate(SgfluidError, ValueError):
    pass


class InvalidParameter(SgfluidError, ValueError):
    pass


class InvalidExperiment(SgfluidError, ValueError):
    pass


class InvalidDictionary(SgfluidError, ValueError):
    pass


class InsufficientResolution(SgfluidError, ValueError):
    pass


class InsufficientSignal(SgfluidError, ValueError):
    pass


class ConfigError(SgfluidError, ValueError):
    pass


class BlowUpError(SgfluidError, FloatingPointError):
    """Raised when a trajectory leaves the finite numbers.

    Carries the simulation time and the last finite W-norm so callers can
    report where the run diverged.
    """

    def __init__(self, t, wnorm, message=None):
        self.t = float(t)
        self.wnorm = float(wnorm)
        super().__init__(message or f"blow-up detected at t={self.t:g} (last |u|_W={self.wnorm:g})")


class InsufficientBurnin(UserWarning):
    pass
