"""Exception types raised across the package."""


class UAPError(Exception):
    """Base class for every error raised by odenet_uap."""


class DimensionError(UAPError, ValueError):
    """Array shapes do not agree with the declared state dimension."""


class HorizonError(UAPError, ValueError):
    """A time argument lies outside ``[0, T]`` or a horizon is invalid."""


class DivergenceError(UAPError, ArithmeticError):
    """A trajectory left the divergence threshold or became non-finite."""

    def __init__(self, time, message=None, index=None):
        self.time = float(time)
        self.index = index
        if message is None:
            message = f"trajectory blew up at t={self.time:.6g}"
            if index is not None:
                message += f" (index {index})"
        super().__init__(message)


class DomainDivergenceError(UAPError, ArithmeticError):
    """One or more grid points of a domain sweep diverged."""

    def __init__(self, failures):
        # failures: list of (grid_index, DivergenceError)
        self.failures = list(failures)
        idx = ", ".join(str(i) for i, _ in self.failures[:5])
        super().__init__(f"{len(self.failures)} grid point(s) diverged: {idx}")


class PreconditionError(UAPError, ValueError):
    """Numerically checked hypotheses of a bound are not met."""


class ConditioningError(UAPError, ArithmeticError):
    """Least-squares system is singular; use ``ridge > 0``."""


class ApproximationFailure(UAPError):
    """A fitter could not reach its target error."""

    def __init__(self, message, best_error):
        self.best_error = float(best_error)
        super().__init__(f"{message} (best achieved {self.best_error:.3e})")


class SearchFailure(UAPError):
    """A geometric parameter search ran out of range."""

    def __init__(self, message, achieved=None):
        self.achieved = achieved
        super().__init__(message)


class StageFailure(UAPError):
    """A pipeline stage could not meet its tolerance."""

    def __init__(self, stage, message, slice_index=None, achieved=None, required=None):
        self.stage = stage
        self.slice_index = slice_index
        self.achieved = achieved
        self.required = required
        super().__init__(f"[{stage}] {message}")


class ConfigError(UAPError, ValueError):
    """Rejected run configuration."""
