"""Exception types shared across the package."""


class InvalidDomainError(ValueError):
    """Domain specification cannot produce a valid grid."""


class HypothesisViolation(ValueError):
    """A standing hypothesis of the problem class is violated."""


class EllipticityError(ValueError):
    """Diffusion tensor fails the uniform ellipticity requirement."""


class AssemblyError(ValueError):
    """Operator assembly cannot handle the requested configuration."""


class ConvergenceError(RuntimeError):
    """Iteration failed to converge.

    Carries the last iterate and its residual so callers can inspect or
    restart from the failure point.
    """

    def __init__(self, message, last_iterate=None, residual=None, iterations=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.iterations = iterations


class SingularJacobianError(RuntimeError):
    """Linearization is numerically singular (fold proximity)."""


class ConfigError(ValueError):
    """Configuration file is malformed or violates a problem hypothesis."""
