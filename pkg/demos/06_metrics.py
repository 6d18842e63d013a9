#!/usr/bin/env python3
"""Evaluation metrics on hand-built masks.

Overlap metrics (Dice, Jaccard) count cells; the surface metrics pool
the nearest-boundary distances in both directions and report their 95th
percentile (hd95) and mean (asd).  Boundary cells are foreground cells
with a background 4-neighbour, the grid edge counting as background.
"""
from __future__ import annotations

import numpy as np

from biview.metrics import boundary_cells, dsc, jaccard, surface_distances


def show(name, pred, gt):
    d, j = dsc(pred, gt), jaccard(pred, gt)
    hd95, asd = surface_distances(pred, gt)
    print(f"{name:28s} dsc={d:.3f} jaccard={j:.3f} hd95={hd95:.3f} asd={asd:.3f}")


def main():
    gt = np.zeros((16, 16), bool)
    gt[4:12, 4:12] = True

    show("perfect prediction", gt.copy(), gt)

    shifted = np.roll(gt, 2, axis=1)
    show("shifted right by 2", shifted, gt)

    eroded = gt.copy()
    eroded[4, :] = False
    eroded[:, 4] = False
    show("one edge row/col missing", eroded, gt)

    speck = gt.copy()
    speck[14, 14] = True
    show("one far false positive", speck, gt)

    print("\nboundary of the 8x8 square has", int(boundary_cells(gt).sum()), "cells")
    print("jaccard = dsc/(2-dsc):",
          np.isclose(jaccard(shifted, gt), dsc(shifted, gt) / (2 - dsc(shifted, gt))))


if __name__ == "__main__":
    main()
