#!/usr/bin/env python3
"""Generate a synthetic segmentation dataset and look at it.

Foreground objects are random ellipses and convex polygons whose edges
are blurred into the background texture, so cells near the boundary
cannot be classified by intensity alone.  The script writes a dataset,
prints the manifest bookkeeping, and renders a few image/label pairs.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from biview.data import GeneratorConfig, generate_synthetic, load_sample
from biview.plotting import render_samples

OUT = Path(__file__).resolve().parent / "_out" / "dataset"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    config = GeneratorConfig(out_dir=OUT / "data", n_labeled=4, n_unlabeled=16, n_test=5)
    manifest = generate_synthetic(config, seed=7)
    print(f"wrote {len(manifest.all_ids())} samples to {manifest.root}")
    print(f"splits: {len(manifest.labeled_ids)} labeled / "
          f"{len(manifest.unlabeled_ids)} unlabeled / {len(manifest.test_ids)} test")

    samples = [load_sample(manifest.root, i, manifest) for i in manifest.labeled_ids]
    png = render_samples([s.image for s in samples], [s.label for s in samples], OUT / "labeled.png")
    print(f"rendered labeled samples to {png}")

    # the boundary band is genuinely ambiguous: a global threshold
    # misclassifies a noticeable share of cells next to the contour
    sample = samples[0]
    image, mask = sample.image[0], sample.label > 0
    thresholds = np.linspace(image.min(), image.max(), 101)
    errors = [((image > t) != mask).mean() for t in thresholds]
    print(f"best global threshold still misclassifies {min(errors):.1%} of all cells")


if __name__ == "__main__":
    main()
