"""Exception types shared across the package."""


class CnlabError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(CnlabError, ValueError):
    """A matrix required to be symmetric positive definite is not."""


class TooFewPoints(CnlabError, ValueError):
    """Not enough observations for the requested operation."""


class DegenerateComponent(CnlabError, RuntimeError):
    """A mixture component collapsed (vanishing weight or singular covariance)."""


class AllRestartsDegenerate(CnlabError, RuntimeError):
    """Every EM restart collapsed; no usable fit was produced."""


class InvalidWeights(CnlabError, ValueError):
    """Mixture weights do not form a probability vector."""


class UnsupportedCondition(CnlabError, ValueError):
    """The requested condition cannot be resolved from the study grids."""


class InvalidParams(CnlabError, ValueError):
    """Noise parameters are inconsistent or out of range."""


class IndexOutOfRange(CnlabError, IndexError):
    """A point index does not refer to a row of the dataset."""


class CurveTooShort(CnlabError, ValueError):
    """A distance curve has too few points for elbow detection."""


class LengthMismatch(CnlabError, ValueError):
    """Two label vectors differ in length."""


class BothEmpty(CnlabError, ValueError):
    """Set similarity is undefined when both sets are empty."""


class InvalidB(CnlabError, ValueError):
    """Bootstrap iteration count must be at least 1."""
