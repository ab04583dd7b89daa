"""Exception types shared across the package."""


class TrihomError(Exception):
    """Base class for all package errors."""


class InvalidShape(TrihomError):
    """Shape parameters are out of range or inconsistent with the cell."""


class UnknownLabel(TrihomError):
    """Requested subdomain label does not exist on this cell."""


class EmptyInterface(TrihomError):
    """Interface measure requested on a single-label cell."""


class DisconnectedSubdomain(TrihomError):
    """Conducting subdomain fails the periodic connectivity/percolation check."""


class MissingCorrector(TrihomError):
    """Tensor assembly received an incomplete corrector set."""


class ResidualTooHigh(TrihomError):
    """A corrector was solved less accurately than the tensor stage allows."""


class NoConvergence(TrihomError):
    """Iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class NonFinite(TrihomError):
    """A field contains NaN or Inf, typically a too-large time step."""


class GridMismatch(TrihomError):
    """Two trajectories cannot be compared on incompatible domains/times."""


class ConfigError(TrihomError):
    """Run configuration failed schema validation."""
