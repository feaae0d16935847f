"""Exception hierarchy shared by all modules."""


class AsconvexError(Exception):
    """Base class for library errors."""


class ConfigurationError(AsconvexError, ValueError):
    """Invalid grid, schedule or configuration values."""


class PreconditionError(AsconvexError, ValueError):
    """An operation was called outside its domain of validity."""


class ResolutionError(AsconvexError, ValueError):
    """Requested frequencies do not fit on the grid."""


class UnsupportedError(AsconvexError, ValueError):
    """Multiplier family or parameter range outside the supported scope."""


class ExceptionalMultiplierError(UnsupportedError):
    """Multiplier falls in an exceptional class; no anti-divergence is built."""


class NearSingularError(AsconvexError, ArithmeticError):
    """A pointwise linear solve is too badly conditioned."""


class DecompositionError(AsconvexError, ArithmeticError):
    """Stress decomposition produced non-positive squared amplitudes."""


class StabilityError(AsconvexError, ArithmeticError):
    """A flow or transport window violates the stability condition."""


class InfeasibleParametersError(ConfigurationError):
    """Schedule parameters violate a feasibility constraint."""
