"""Exception types shared across the package."""


class NoveltyScanError(Exception):
    """Base class for package-specific failures."""


class CalibrationError(NoveltyScanError):
    """Cluster-separation calibration could not bracket or converge."""


class DegenerateBatchError(NoveltyScanError):
    """A contrastive batch has no usable positive pairs."""


class DegenerateDataError(NoveltyScanError):
    """Input data carries no usable structure (e.g. all points identical)."""


class ConvergenceError(NoveltyScanError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class FitFailureError(NoveltyScanError):
    """A maximum-likelihood fit failed or produced a degenerate result."""


class NumericalOverflowError(NoveltyScanError):
    """A numerical quantity left the representable range."""
