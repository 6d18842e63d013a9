"""Complementary background labels for single- and multi-target segmentation.

A foreground label marks cells belonging to the target; its background
counterpart is the cellwise inversion, so the two always sum to an
all-ones tensor.  Multi-target labels go through a one-hot encoding
first and are inverted per channel.
"""
from __future__ import annotations

import numpy as np

__all__ = ["onehot", "make_background_single", "make_background_multi"]


def onehot(label: np.ndarray, class_count: int) -> np.ndarray:
    """One-hot encode an (H, W) label grid into (class_count, H, W)."""
    label = np.asarray(label)
    if class_count < 1:
        raise ValueError(f"class_count must be >= 1, got {class_count}")
    if label.max(initial=0) >= class_count or label.min(initial=0) < 0:
        raise ValueError(
            f"label values must lie in [0, {class_count}), got range "
            f"[{label.min()}, {label.max()}]"
        )
    planes = np.arange(class_count).reshape((class_count,) + (1,) * label.ndim)
    return (label[None] == planes).astype(np.float64)


def make_background_single(label: np.ndarray) -> np.ndarray:
    """Invert a binary (H, W) foreground label into its background label."""
    label = np.asarray(label)
    values = np.unique(label)
    if not np.all(np.isin(values, (0, 1))):
        raise ValueError(f"single-target label must be binary, found values {values}")
    return (1.0 - label).astype(np.float64)


def make_background_multi(label: np.ndarray, class_count: int) -> np.ndarray:
    """Invert the one-hot encoding of an (H, W) label, per channel.

    Every cell's channel vector sums to class_count - 1: exactly the
    channels the cell does not belong to.
    """
    return 1.0 - onehot(label, class_count)
