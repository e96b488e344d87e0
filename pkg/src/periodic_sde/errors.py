"""Exception hierarchy shared by the library and the CLI."""


class PeriodicSDEError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PeriodicSDEError, ValueError):
    pass


class NonScalarProductError(PeriodicSDEError, ValueError):
    """The full-period product is not a scalar multiple of the identity."""


class LimitUndefinedError(PeriodicSDEError, ValueError):
    """The periodic limit process only exists when the multiplier is 1."""


class HorizonError(PeriodicSDEError, ValueError):
    """A trajectory or ensemble is too short for the requested quantity.

    ``required`` carries the horizon that would have been sufficient, when known.
    """

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class ConditionError(PeriodicSDEError, ValueError):
    """Neither summability branch holds for the given model."""


class CoefficientDrawError(PeriodicSDEError, RuntimeError):
    pass


class NoiseLawError(PeriodicSDEError, ValueError):
    pass


class BudgetError(PeriodicSDEError, ValueError):
    pass
