"""Exception taxonomy shared across the package."""


class BackdoorLabError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(BackdoorLabError, ValueError):
    """Vector or matrix dimensions do not line up."""


class EmptyDatasetError(BackdoorLabError, ValueError):
    """An operation that needs at least one example received none."""


class ConfigError(BackdoorLabError, ValueError):
    """Infeasible or inconsistent configuration values."""


class NoOrthogonalComplementError(BackdoorLabError, ValueError):
    """The subspace fills the ambient space, so no orthogonal direction exists."""


class InconsistentPatchError(BackdoorLabError, ValueError):
    """A patch would change the ground-truth label of in-distribution points."""


class SamplerError(BackdoorLabError, RuntimeError):
    """Rejection or conditional sampling could not produce a point."""


class NotSeparableError(BackdoorLabError, RuntimeError):
    """Hard-margin training was asked to separate an inseparable set."""


class SearchBudgetError(BackdoorLabError, ValueError):
    """Exhaustive search requested on an instance beyond the supported size."""


class WitnessError(BackdoorLabError, ValueError):
    """Witness construction inputs violate their placement constraints."""


class FormatError(BackdoorLabError, ValueError):
    """Byte stream does not follow the declared binary layout."""


class TruncationError(BackdoorLabError, ValueError):
    """Byte stream ends before the declared payload is complete."""
