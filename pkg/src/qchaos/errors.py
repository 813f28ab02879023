"""Error types raised by the simulation layers.

Every error that signals a violated runtime invariant derives from
``SimulationError`` so callers (and the CLI) can distinguish physics/numerics
failures (exit code 2) from configuration mistakes (``ConfigError``, exit
code 3).
"""

__all__ = [
    "SimulationError",
    "GridOverflow",
    "NonfiniteState",
    "NonfiniteField",
    "TraceDrift",
    "NegativeDensity",
    "ClosureBreakdown",
    "SingularPoint",
    "StretchOverflow",
    "ConfigError",
]


class SimulationError(RuntimeError):
    """A runtime invariant of the simulation was violated."""


class GridOverflow(SimulationError):
    """Probability mass reached the edge of a position or momentum grid."""


class NonfiniteState(SimulationError):
    """A wavefunction, walker, or cumulant state contains NaN or Inf."""


class NonfiniteField(SimulationError):
    """A phase-space field contains NaN or Inf."""


class TraceDrift(SimulationError):
    """Density-matrix trace drifted beyond tolerance."""


class NegativeDensity(SimulationError):
    """Filter reweighting drove a classical density significantly negative."""


class ClosureBreakdown(SimulationError):
    """Gaussian-closure variance exceeded its validity bound."""


class SingularPoint(SimulationError):
    """A transition criterion is undefined where the force vanishes."""


class StretchOverflow(SimulationError):
    """Divergence grew too fast for the renormalization interval."""


class ConfigError(ValueError):
    """Experiment configuration is missing, malformed, or contains unknown keys."""
