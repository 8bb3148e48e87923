"""Exception types shared across the package."""


class SdreLabError(Exception):
    """Base class for all library errors."""


class ValidationError(SdreLabError):
    """A configuration value violates a documented invariant."""


class ParseError(SdreLabError):
    """A config file or manifest could not be parsed."""


class BadWeights(SdreLabError):
    """Weight matrices fail their symmetry or definiteness requirements."""


class BadCovariance(SdreLabError):
    """A covariance matrix is not symmetric positive semidefinite."""


class CareFailure(SdreLabError):
    """Base class for algebraic Riccati solver failures."""


class NotStabilizable(CareFailure):
    """The Hamiltonian matrix has fewer than n stable eigenvalues."""


class SingularSubspace(CareFailure):
    """Both the subspace method and the Newton-Kleinman fallback failed."""


class NotHurwitz(SdreLabError):
    """A Lyapunov solve was attempted with a non-Hurwitz coefficient matrix."""


class NonFiniteDerivative(SdreLabError):
    """An integrand or difference quotient evaluated to NaN or inf."""


class NonFiniteState(SdreLabError):
    """An estimator state left the plausibility region (divergence)."""


class AlphaOutOfRange(SdreLabError):
    """Convex blend coefficient outside [0, 1]."""


class ShapeMismatch(SdreLabError):
    """Run results with inconsistent shapes were aggregated."""


class DivergenceCeiling(SdreLabError):
    """More than the allowed fraction of Monte-Carlo runs diverged."""
