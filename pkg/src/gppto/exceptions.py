"""Exception types raised across the package."""

import numpy as np


class ConditioningError(np.linalg.LinAlgError):
    """A Gram matrix could not be factorized even after adding jitter."""

    def __init__(self, message, duplicates=()):
        super().__init__(message)
        self.duplicates = list(duplicates)


class SetupError(ValueError):
    """The planning instance is infeasible (e.g. the goal is out of budget)."""


class WeightConfigurationError(ValueError):
    """Descent weights do not give a positive definite Riccati recursion."""


class OutOfRegionError(ValueError):
    """A location lies outside the environment region."""
