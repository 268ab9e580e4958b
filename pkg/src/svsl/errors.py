"""Exception and warning types shared across the package."""


class DimensionMismatchError(ValueError):
    """An input vector or matrix has the wrong dimension."""


class NotPositiveDefiniteError(ValueError):
    """A covariance matrix failed its positive-definiteness check."""


class InsufficientSamplesError(ValueError):
    """Too few samples to fit a surrogate model.

    Carries the required and available sample counts.
    """

    def __init__(self, required: int, got: int, what: str = "quadratic fit"):
        self.required = required
        self.got = got
        super().__init__(f"{what} needs at least {required} samples, got {got}")


class TrustRegionInfeasibleError(RuntimeError):
    """No dual multiplier in the search range yields a positive-definite precision."""


class DualSearchError(RuntimeError):
    """The 1-D dual search failed to bracket or localize the multiplier.

    Carries the last bracket examined.
    """

    def __init__(self, message: str, bracket: tuple[float, float]):
        self.bracket = bracket
        super().__init__(f"{message} (last bracket: eta in [{bracket[0]:g}, {bracket[1]:g}])")


class InvalidOperationError(RuntimeError):
    """Operation not permitted in the current model state."""


class NumericalUnderflowWarning(RuntimeWarning):
    """All densities underflowed; a documented fallback value was returned."""
