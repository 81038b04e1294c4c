"""Exception hierarchy for flexqueue."""


class FlexQueueError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(FlexQueueError, ValueError):
    """Invalid problem instance."""


class NonConvexCost(ModelError):
    """Holding cost is not convex on the evaluated range."""


class AssumptionViolated(ModelError):
    """The holding-cost growth condition required for convergence fails."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class TabularOutOfRange(ModelError, IndexError):
    """A tabular holding cost was queried beyond its last entry."""


class SolverError(FlexQueueError, ArithmeticError):
    """Base class for numerical failures."""


class NoConvergence(SolverError):
    def __init__(self, max_iters: int, residual: float):
        super().__init__(f"no convergence after {max_iters} iterations (residual {residual:.3e})")
        self.max_iters = max_iters
        self.residual = residual


class TruncationTooTight(SolverError):
    """An extracted threshold sits within the safety margin of the state cap."""


class NonMonotoneBurden(SolverError):
    """The burden function is not nondecreasing; thresholds are undefined."""


class SingularSystem(SolverError):
    pass


class NoCrossingInRange(FlexQueueError):
    """The flexibility verdict never changes over the scanned reward range."""


class NotStabilized(SolverError):
    def __init__(self, max_stages: int):
        super().__init__(f"vanishing-discount sequence did not stabilize in {max_stages} stages")
        self.max_stages = max_stages


class ConfigError(FlexQueueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key


class UnstablePolicyWarning(RuntimeWarning):
    pass


class NearTieWarning(RuntimeWarning):
    """A burden value is within tolerance of a decision threshold."""
