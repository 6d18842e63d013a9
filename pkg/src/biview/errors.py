"""Exception types shared across the package."""
from __future__ import annotations


class ConfigurationError(ValueError):
    """A run or generator configuration is invalid or incomplete."""


class CorruptSampleError(RuntimeError):
    """A stored sample file does not match its declared layout."""


class CorruptCheckpointError(RuntimeError):
    """A checkpoint header disagrees with its parameter blob."""


class UndefinedMetricError(ValueError):
    """A surface metric was requested for an empty mask.

    `empty_mask` names the offending side: "pred", "gt" or "both".
    """

    def __init__(self, empty_mask: str):
        super().__init__(f"surface distances undefined: {empty_mask} mask is empty")
        self.empty_mask = empty_mask


class StepTooLargeError(ValueError):
    """A gradient step pushed the foreground probability out of (0, 1)."""


class DegenerateRegionWarning(UserWarning):
    """A masked loss was evaluated over a region with no active cells."""
