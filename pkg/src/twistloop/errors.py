"""Exception hierarchy shared by all twistloop modules."""


class TwistloopError(Exception):
    """Base class for all package errors."""


class ConfigError(TwistloopError):
    """Invalid run configuration (bad file, unknown key, missing field)."""


class DimensionOverflowError(TwistloopError):
    """Requested Hilbert-space or matrix dimension exceeds the configured limit."""


class GaplessError(TwistloopError):
    """No spectral gap above tolerance, or a gap closes along a sweep path."""


class OverlapSingularError(TwistloopError):
    """An overlap matrix in a Wilson product is near-singular; a finer grid is needed."""


class ConvergenceError(TwistloopError):
    """Iterative eigensolver failed to converge; carries iteration diagnostics."""


class FlowClosureError(TwistloopError):
    """Target manifold momenta are not closed under the spectral-flow map K -> K - N*dK."""


class UnwrapError(TwistloopError):
    """Berry-phase unwrapping stayed ambiguous after the refinement cap."""
