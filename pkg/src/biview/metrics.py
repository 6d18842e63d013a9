"""Overlap and boundary-distance metrics for binary masks.

Surface distances follow the pooled convention: the directed
nearest-boundary distances are computed in both directions, pooled into
one sample, and summarised by the 95th percentile (hd95) and the mean
(asd).  Boundary cells are mask cells with at least one background
4-neighbour, where the grid edge counts as background.  Distances are
Euclidean, centre to centre, in cell units.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import UndefinedMetricError

__all__ = [
    "dsc",
    "jaccard",
    "boundary_cells",
    "surface_distances",
    "MetricRow",
    "MetricReport",
]

METRIC_NAMES = ("dsc", "jaccard", "hd95", "asd")
CSV_HEADER = "id,class,dsc,jaccard,hd95,asd"


def _as_binary(mask, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype != bool:
        values = np.unique(arr)
        if not np.all(np.isin(values, (0, 1))):
            raise ValueError(f"{name} must be binary, found values {values}")
        arr = arr.astype(bool)
    return arr


def _check_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = _as_binary(pred, "pred")
    g = _as_binary(gt, "gt")
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return p, g


def dsc(pred, gt) -> float:
    """Dice similarity 2|P∩G| / (|P|+|G|); 1.0 when both masks are empty."""
    p, g = _check_pair(pred, gt)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / total


def jaccard(pred, gt) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    p, g = _check_pair(pred, gt)
    union = int((p | g).sum())
    if union == 0:
        return 1.0
    return int((p & g).sum()) / union


def boundary_cells(mask) -> np.ndarray:
    """Mask cells with a background 4-neighbour; the grid edge is background."""
    m = _as_binary(mask, "mask")
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def surface_distances(pred, gt) -> tuple[float, float]:
    """(hd95, asd) from the pooled bidirectional boundary distances."""
    p, g = _check_pair(pred, gt)
    p_empty, g_empty = not p.any(), not g.any()
    if p_empty or g_empty:
        raise UndefinedMetricError("both" if p_empty and g_empty else ("pred" if p_empty else "gt"))
    p_pts = np.argwhere(boundary_cells(p)).astype(np.float64)
    g_pts = np.argwhere(boundary_cells(g)).astype(np.float64)
    d_pg, _ = cKDTree(g_pts).query(p_pts)
    d_gp, _ = cKDTree(p_pts).query(g_pts)
    # sorting makes the summary order-independent, hence exactly symmetric
    pooled = np.sort(np.concatenate([d_pg, d_gp]))
    return float(np.percentile(pooled, 95)), float(pooled.mean())


@dataclass
class MetricRow:
    """One evaluated (sample, class) pair; hd95/asd are NaN when undefined."""

    id: str
    class_index: int
    dsc: float
    jaccard: float
    hd95: float
    asd: float
    defined: bool

    def csv_values(self) -> list[str]:
        fmt = lambda v: "nan" if not np.isfinite(v) else repr(float(v))  # noqa: E731
        return [self.id, str(self.class_index), fmt(self.dsc), fmt(self.jaccard), fmt(self.hd95), fmt(self.asd)]


@dataclass
class MetricReport:
    """Per-row metrics plus means over the rows where all metrics are defined."""

    rows: list[MetricRow] = field(default_factory=list)

    def add(self, sample_id: str, class_index: int, pred, gt) -> MetricRow:
        d = dsc(pred, gt)
        j = jaccard(pred, gt)
        try:
            hd95, asd = surface_distances(pred, gt)
            defined = True
        except UndefinedMetricError:
            hd95, asd, defined = float("nan"), float("nan"), False
        row = MetricRow(sample_id, class_index, d, j, hd95, asd, defined)
        self.rows.append(row)
        return row

    @property
    def excluded_count(self) -> int:
        return sum(not row.defined for row in self.rows)

    def means(self) -> dict[str, float]:
        defined = [row for row in self.rows if row.defined]
        if not defined:
            return {name: float("nan") for name in METRIC_NAMES}
        return {name: float(np.mean([getattr(r, name) for r in defined])) for name in METRIC_NAMES}

    def class_means(self) -> dict[int, dict[str, float]]:
        out: dict[int, dict[str, float]] = {}
        for k in sorted({row.class_index for row in self.rows}):
            defined = [r for r in self.rows if r.class_index == k and r.defined]
            if defined:
                out[k] = {
                    name: float(np.mean([getattr(r, name) for r in defined]))
                    for name in METRIC_NAMES
                }
            else:
                out[k] = {name: float("nan") for name in METRIC_NAMES}
        return out

    def write_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER.split(","))
            for row in self.rows:
                writer.writerow(row.csv_values())

    def write_summary(self, path: Path | str) -> None:
        summary = {
            "means": self.means(),
            "class_means": {str(k): v for k, v in self.class_means().items()},
            "rows": len(self.rows),
            "excluded_undefined": self.excluded_count,
        }
        Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
