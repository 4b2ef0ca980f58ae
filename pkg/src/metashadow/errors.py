"""Exception hierarchy shared by all modules.

Each class maps to one CLI exit code (see ``metashadow.cli``).
"""


class MetashadowError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(MetashadowError, ValueError):
    pass


class CapacityError(MetashadowError):
    """Requested size exceeds the dense-storage limits."""


class DegenerateGroupError(MetashadowError):
    """A basis group has zero total weight after photon-loss weighting."""


class FitError(MetashadowError):
    """Port-operator fit rejected (inconsistent or non-PSD transmission data)."""


class ModelError(MetashadowError):
    """Emulator probabilities are not a valid distribution."""


class SingularityError(MetashadowError):
    """A per-basis transition matrix is too close to singular to invert."""

    def __init__(self, message, basis=None):
        super().__init__(message)
        self.basis = basis


class NonConvergenceError(MetashadowError):
    """No optimizer start converged; ``best`` carries the best-so-far result."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DataFormatError(MetashadowError, ValueError):
    """Malformed input file (CSV/JSON)."""


class EstimationError(MetashadowError):
    """An estimator could not be evaluated on the given data."""

    def __init__(self, message, repetition=None):
        super().__init__(message)
        self.repetition = repetition
