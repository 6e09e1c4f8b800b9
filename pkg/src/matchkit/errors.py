"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: configuration problems
exit 2, solver infeasibility exits 3, oracle disagreement exits 4.
"""


class MatchkitError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(MatchkitError):
    """Invalid configuration: bad geometry, bad schema, resolution too coarse."""


class InfeasibleError(MatchkitError):
    """The proportionate-splitting equation has no root (mass mismatch)."""


class OracleMismatchError(MatchkitError):
    """Continuum solution and discrete oracle disagree beyond tolerance."""


class InconsistencyError(MatchkitError):
    """Internal consistency check failed (e.g. price envelopes crossing)."""
