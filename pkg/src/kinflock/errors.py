"""Exception hierarchy shared by all solvers and the CLI."""


class KinFlockError(Exception):
    """Base class for every error raised by the package."""


class TailOverflow(KinFlockError):
    """Too much mass sits in the outermost velocity cells."""


class CflViolation(KinFlockError):
    """An explicit sub-step was asked to run above its stability bound."""


class LinearSolveFailure(KinFlockError):
    """A per-column collision solve produced a non-finite result."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class VacuumBreach(KinFlockError):
    """Density fell below the no-vacuum floor of a comparison experiment."""


class NonUnitMass(KinFlockError):
    """A functional that needs unit total mass got something else."""


class ConfigError(KinFlockError):
    """Bad or inconsistent experiment configuration."""


class InvariantViolation(KinFlockError):
    """A monitored invariant (conservation, positivity, ...) failed."""

    def __init__(self, name, value, limit):
        super().__init__(f"{name}: {value:.3e} exceeds {limit:.3e}")
        self.name = name
        self.value = value
        self.limit = limit
