"""Exception types raised across the package."""


class SnpError(Exception):
    """Base class for package errors."""


class DimensionError(SnpError, ValueError):
    """Input dimension does not match the density or index set."""


class DegenerateEnsembleError(SnpError):
    """Sample covariance is not positive definite (or all samples coincide)."""


class InfeasibleBranchError(SnpError):
    """No strictly feasible start was found for a relaxed-fit sign branch."""


class SingularGradientError(SnpError):
    """A sample sits inside the guard band around a zero of the polynomial."""

    def __init__(self, sample_index, value):
        self.sample_index = sample_index
        self.value = value
        super().__init__(
            f"polynomial value {value:.3e} at sample {sample_index} is inside the "
            "guard band; gradient undefined"
        )


class NonFiniteObjectiveError(SnpError):
    """The optimizer encountered a non-finite objective or gradient."""


class DivergenceError(SnpError):
    """Integration produced a non-finite state.

    Attributes
    ----------
    failures : list of (int, float)
        ``(point_index, time)`` pairs for every diverged point.
    """

    def __init__(self, failures):
        self.failures = list(failures)
        first = self.failures[0]
        super().__init__(
            f"{len(self.failures)} point(s) diverged; first at index {first[0]}, "
            f"t={first[1]!r}"
        )


class UnsupportedGeometryError(SnpError):
    """Requested region cannot be integrated by the analytic CDF."""


class EnsembleParseError(SnpError, ValueError):
    """Malformed ensemble file."""
