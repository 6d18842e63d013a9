"""Cut-mix masks and the paired mixing of images, labels and pseudo-labels.

A mix mask is all ones except one contiguous zero block whose side
lengths are floor(beta * dim).  Mixing a pair under the mask exchanges
the block region between the two inputs; supervision targets combine a
ground-truth raster with a pseudo-label raster under the same mask.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["MixMask", "make_mask", "mix_pair", "mix_supervision"]


@dataclass(frozen=True)
class MixMask:
    """Binary (H, W) mask with a recorded zero block (top, left, height, width)."""

    mask: np.ndarray
    zero_block: tuple[int, int, int, int]
    beta: float

    @property
    def complement(self) -> np.ndarray:
        return 1.0 - self.mask


def make_mask(shape: tuple[int, int], beta: float, rng: np.random.Generator) -> MixMask:
    """Place a floor(beta*H) x floor(beta*W) zero block uniformly at random."""
    height, width = shape
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    block_h = int(beta * height)
    block_w = int(beta * width)
    if block_h < 1 or block_w < 1:
        raise ValueError(
            f"beta={beta} gives an empty zero block for shape {shape}"
        )
    top = int(rng.integers(0, height - block_h + 1))
    left = int(rng.integers(0, width - block_w + 1))
    mask = np.ones((height, width), dtype=np.float64)
    mask[top : top + block_h, left : left + block_w] = 0.0
    return MixMask(mask=mask, zero_block=(top, left, block_h, block_w), beta=beta)


def _mask_array(mask: MixMask | np.ndarray, spatial: tuple[int, int]) -> np.ndarray:
    m = mask.mask if isinstance(mask, MixMask) else np.asarray(mask, dtype=np.float64)
    if m.shape[-2:] != spatial:
        raise ValueError(f"mask shape {m.shape} does not match raster spatial shape {spatial}")
    return m


def mix_pair(
    xa: np.ndarray, xb: np.ndarray, mask: MixMask | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Exchange the zero-block region between two rasters.

    Returns (xa*M + xb*(1-M), xa*(1-M) + xb*M); the outputs always sum
    cellwise to xa + xb.
    """
    xa = np.asarray(xa, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    if xa.shape != xb.shape:
        raise ValueError(f"shape mismatch: {xa.shape} vs {xb.shape}")
    m = _mask_array(mask, xa.shape[-2:])
    return xa * m + xb * (1.0 - m), xa * (1.0 - m) + xb * m


def mix_supervision(
    y_gt: np.ndarray,
    p_pseudo: np.ndarray,
    mask: MixMask | np.ndarray,
    orientation: str,
) -> np.ndarray:
    """Combine ground truth and pseudo-label under the mask.

    orientation "fg" keeps the ground truth where the mask is 1;
    orientation "bg" keeps it where the mask is 0 (the mirrored layout
    used for the second view of a mixed pair).
    """
    y_gt = np.asarray(y_gt, dtype=np.float64)
    p_pseudo = np.asarray(p_pseudo, dtype=np.float64)
    if y_gt.shape != p_pseudo.shape:
        raise ValueError(f"shape mismatch: {y_gt.shape} vs {p_pseudo.shape}")
    m = _mask_array(mask, y_gt.shape[-2:])
    if orientation == "fg":
        return y_gt * m + p_pseudo * (1.0 - m)
    if orientation == "bg":
        return y_gt * (1.0 - m) + p_pseudo * m
    raise ValueError(f"orientation must be 'fg' or 'bg', got {orientation!r}")
