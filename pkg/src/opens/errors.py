"""Exception types shared across the engines."""


class GeometryError(ValueError):
    """Interval layout violates 0 < L < a < b or a cutoff constraint."""


class SingularMatrixError(ValueError):
    """A linear solve hit a (numerically) singular matrix."""


class DomainError(ValueError):
    """Input outside the validity domain of a closed-form expression."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class ContinuationError(RuntimeError):
    """Rational continuation in the replica index is unstable."""


class BranchTrackingError(RuntimeError):
    """Square-root branch of a Gaussian determinant could not be resolved."""


class RegimeWarning(UserWarning):
    """Parameters leave the regime a formula or expansion assumes."""
