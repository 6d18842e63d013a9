#!/usr/bin/env python3
"""Complementary background labels, single- and multi-target.

A background label is the cellwise inversion of the foreground label:
for one target simply 1 - label, for several targets the inversion of
each one-hot channel.  Foreground and background labels always sum to
an all-ones tensor, which is what the bidirectional losses exploit.
"""
from __future__ import annotations

import numpy as np

from biview.labels import make_background_multi, make_background_single, onehot


def main():
    label = np.array(
        [
            [0, 0, 0, 0, 0],
            [0, 1, 1, 0, 0],
            [0, 1, 1, 0, 0],
            [0, 0, 0, 0, 0],
            [0, 0, 0, 0, 0],
        ]
    )
    background = make_background_single(label.astype(float))
    print("single-target label:\n", label)
    print("background label:\n", background.astype(int))
    print("sum is all ones:", bool(np.all(label + background == 1)))

    multi = np.array(
        [
            [0, 0, 2, 2],
            [1, 0, 2, 2],
            [1, 0, 0, 0],
            [0, 0, 3, 0],
        ]
    )
    encoded = onehot(multi, class_count=4)
    bg = make_background_multi(multi, class_count=4)
    print("\nmulti-target label:\n", multi)
    print("one-hot channel for class 2:\n", encoded[2].astype(int))
    print("background channel for class 2:\n", bg[2].astype(int))
    print("per-cell background channel sum (always K):\n", bg.sum(axis=0).astype(int))


if __name__ == "__main__":
    main()
