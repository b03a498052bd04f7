"""Exception types raised across the package."""


class ActiveLatticeError(Exception):
    """Base class for all package errors."""


class ProfileInvalid(ActiveLatticeError, ValueError):
    pass


class OverflowGuard(ActiveLatticeError, OverflowError):
    pass


class BlockTooLarge(ActiveLatticeError, ValueError):
    pass


class UnknownClosedForm(ActiveLatticeError, KeyError):
    pass


class GridMismatch(ActiveLatticeError, ValueError):
    pass


class StepRejected(ActiveLatticeError, RuntimeError):
    pass


class AmplitudeDomain(ActiveLatticeError, ValueError):
    pass


class SearchWindowExceeded(ActiveLatticeError, RuntimeError):
    pass


class NoPhaseSeparation(ActiveLatticeError, RuntimeError):
    pass


class NotConverged(ActiveLatticeError, RuntimeError):
    pass


class FitWindowTooShort(ActiveLatticeError, RuntimeError):
    """MSD is not linear over the fit window (subdiffusive or transient regime)."""

    def __init__(self, message, exponent=None):
        super().__init__(message)
        self.exponent = exponent


class InsufficientSignal(ActiveLatticeError, RuntimeError):
    pass


class ParameterMismatch(ActiveLatticeError, ValueError):
    pass


class ConfigError(ActiveLatticeError, ValueError):
    """Run configuration failed validation; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
