"""Exception hierarchy. Numerical failures map to CLI exit code 3, config errors to 2."""


class GbpmError(Exception):
    """Base class for numerical failures.

    ``phase`` and ``step`` are filled in by the time loop when a failure
    propagates out of a run.
    """

    def __init__(self, message: str = "", *, indices=None, phase: str | None = None,
                 step: int | None = None):
        super().__init__(message)
        self.indices = indices
        self.phase = phase
        self.step = step

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.phase is not None:
            where.append(f"phase={self.phase}")
        if self.step is not None:
            where.append(f"step={self.step}")
        return f"{msg} ({', '.join(where)})" if where else msg


class EmptyTubeError(GbpmError):
    """The surface does not intersect the grid's tube."""


class ProjectionError(GbpmError):
    """A closest-point projection failed to converge."""


class UnderResolvedError(GbpmError):
    """Too few neighbours to build a local fit."""


class DegenerateFitError(GbpmError):
    """A least-squares system lost rank below what the fit needs."""


class OutOfDomainError(GbpmError):
    """The tube reached the boundary of the grid."""


class StabilityError(GbpmError):
    """The time step violates an explicit stability bound."""


class ConfigError(ValueError):
    """Invalid run configuration."""
