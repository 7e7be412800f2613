"""Exception types shared across the package."""


class EmptySupportError(ValueError):
    """A measure-restricted operation was asked to act on zero mass."""


class SeparationError(ValueError):
    """A point family violates a required pairwise separation."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class PlaneFitError(RuntimeError):
    """A required local plane fit is impossible (mass or atom count too low)."""

    def __init__(self, message, center=None, radius=None):
        super().__init__(message)
        self.center = center
        self.radius = radius


class DisjointnessError(ValueError):
    """A ball family violates a required disjointness precondition."""


class EnergyInfiniteError(ValueError):
    """The Dirichlet integrand is not integrable on the requested ball."""
