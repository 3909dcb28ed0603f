"""Exception hierarchy shared by all modules."""


class KSNSError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(KSNSError, ValueError):
    """Invalid parameters, grid specification or configuration file."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        if key is not None and key not in message:
            message = f"{key}: {message}"
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StateError(KSNSError):
    """A field violates a structural invariant (e.g. positivity)."""


class SolverError(KSNSError):
    """Iterative linear solve did not reach its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")


class CompatibilityError(SolverError):
    """Right-hand side of a singular Neumann problem is not mean-zero."""

    def __init__(self, message, mean=float("nan")):
        self.mean = mean
        KSNSError.__init__(self, f"{message} (mean={mean:.3e})")
        self.residual = float("nan")
        self.iterations = 0


class StepError(KSNSError):
    """Time step was forced below ``dt_min``."""

    def __init__(self, message, t=float("nan"), dt=float("nan")):
        self.t = t
        self.dt = dt
        super().__init__(message)


class HypothesisError(KSNSError):
    """Sampled series does not satisfy the differential inequality to check."""
