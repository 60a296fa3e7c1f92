"""Exception hierarchy shared across the package."""


class LgmCheckError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(LgmCheckError):
    """Matrix factorization hit a non-positive pivot (even after ridge)."""


class DimensionMismatch(LgmCheckError):
    """Operands do not conform."""


class InvalidDimension(LgmCheckError):
    """A size argument is out of the valid range."""


class IsolatedNode(LgmCheckError):
    """Adjacency graph contains a node with no neighbours."""


class RhoOutOfRange(LgmCheckError):
    """SAR autocorrelation must satisfy |rho| < 1."""


class ParseError(LgmCheckError):
    """A data or structure file could not be parsed."""


class NonPositiveH(LgmCheckError):
    """Noise scale vector h must be strictly positive."""


class SingularStructure(LgmCheckError):
    """Non-intrinsic structure matrix is singular."""


class NumericalBreakdown(LgmCheckError):
    """Computed quantity violates a hard numerical bound."""


class UnknownTarget(LgmCheckError):
    """Sensitivity target name not recognised."""


class UnsupportedDirection(LgmCheckError):
    """Requested perturbation direction has no closed form."""


class TooFewDraws(LgmCheckError):
    """Monte-Carlo estimator needs more draws."""


class DegenerateReference(LgmCheckError):
    """Reference distribution has (numerically) zero variance."""


class NegativeInformation(LgmCheckError):
    """Curvature-based reference undefined for non-positive information."""


class NoConvergence(LgmCheckError):
    """Optimizer failed to converge after the allowed restarts."""


class ImproperPrior(LgmCheckError):
    """Operation requires a proper prior."""


class MissingPosterior(LgmCheckError):
    """Operation requires a fitted posterior."""


class WeightMismatch(LgmCheckError):
    """Grid weights are not a normalized probability vector."""


class NonFiniteLoglik(LgmCheckError):
    """Log-likelihood evaluation returned a non-finite value."""
