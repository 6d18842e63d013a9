"""Training losses and schedules.

The base segmentation loss is an equal-weight sum of Dice loss and
binary cross-entropy, evaluated only over an active region mask and
normalised by the active-cell count.  On top of it sit the teacher
pre-training losses, the region-wide loss combining labeled and
pseudo-labeled supervision over complementary mask regions, and the
bidirectional consistency loss tying the mixed and background
predictions to the foreground prediction.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Var, as_var
from .augment import MixMask
from .errors import DegenerateRegionWarning
from .network import ForwardOutput

__all__ = [
    "DICE_SMOOTH",
    "PROB_EPS",
    "LossBreakdown",
    "seg_loss",
    "teacher_losses",
    "region_wide_loss",
    "RegionWideParts",
    "bcl_loss",
    "lambda_schedule",
]

DICE_SMOOTH = 1e-5
PROB_EPS = 1e-7


@dataclass
class LossBreakdown:
    """All scalar loss components of one training step."""

    l_fg_l: float
    l_bg_l: float
    l_fg_u: float
    l_bg_u: float
    l_rw: float
    l_bcl_a: float
    l_bcl_b: float
    l_bcl: float
    l_total: float
    lambda_t: float
    alpha: float

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def check_identities(self, atol: float = 1e-9) -> None:
        """Raise if the decomposition identities do not hold."""
        rw = self.l_fg_l + self.l_bg_l + self.alpha * (self.l_fg_u + self.l_bg_u)
        bcl = self.l_bcl_a + self.l_bcl_b
        total = self.l_rw + self.lambda_t * self.l_bcl
        for name, expect, got in (
            ("l_rw", rw, self.l_rw),
            ("l_bcl", bcl, self.l_bcl),
            ("l_total", total, self.l_total),
        ):
            if abs(expect - got) > atol:
                raise AssertionError(f"{name} identity violated: {got} != {expect}")
        for f in fields(self):
            if f.name not in ("lambda_t", "alpha") and getattr(self, f.name) < -atol:
                raise AssertionError(f"{f.name} is negative: {getattr(self, f.name)}")

    def csv_row(self) -> str:
        return ",".join(repr(getattr(self, f.name)) for f in fields(self))

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.field_names())


def _to_nchw(x, name: str) -> Var:
    v = as_var(x)
    if v.value.ndim == 2:
        v = ad.reshape(v, (1, 1) + v.value.shape)
    elif v.value.ndim == 3:
        v = ad.reshape(v, (1,) + v.value.shape)
    elif v.value.ndim != 4:
        raise ValueError(f"{name} must be 2-D, 3-D or 4-D, got shape {v.value.shape}")
    return v


def _region_array(region, spatial: tuple[int, int]) -> np.ndarray:
    if region is None:
        return np.ones((1, 1) + spatial, dtype=np.float64)
    m = region.mask if isinstance(region, MixMask) else np.asarray(region, dtype=np.float64)
    if m.ndim == 2:
        m = m[None, None]
    elif m.ndim == 3:
        m = m[:, None]
    if m.shape[-2:] != spatial:
        raise ValueError(f"region shape {m.shape} does not match raster spatial shape {spatial}")
    return m


def seg_loss(pred, target, region=None) -> Var:
    """0.5 * Dice loss + 0.5 * cross-entropy over the active region.

    Dice is computed per sample and channel and averaged; cross-entropy
    is averaged over active sites.  An empty region returns 0 and emits
    a DegenerateRegionWarning.
    """
    pred = _to_nchw(pred, "pred")
    target_arr = np.asarray(target, dtype=np.float64)
    target = _to_nchw(target_arr, "target")
    if pred.value.shape != target.value.shape:
        raise ValueError(f"shape mismatch: pred {pred.value.shape} vs target {target.value.shape}")
    if pred.value.min() < 0.0 or pred.value.max() > 1.0:
        raise ValueError("pred must hold probabilities in [0, 1]")
    if not (((target.value == 0.0) | (target.value == 1.0)).all()):
        raise ValueError("target must be binary")
    n, c, h, w = pred.value.shape
    m = _region_array(region, (h, w))
    if m.sum() == 0:
        warnings.warn("seg_loss evaluated over an empty region", DegenerateRegionWarning)
        return Var(0.0)

    m_var = Var(np.broadcast_to(m, (n, 1, h, w)).copy())
    pm = pred * m_var
    tm = Var(target.value * np.broadcast_to(m, (n, 1, h, w)))

    inter = ad.reduce_sum(pm * tm, axis=(2, 3))
    denom = ad.reduce_sum(pm, axis=(2, 3)) + ad.reduce_sum(tm, axis=(2, 3))
    dice = ad.reduce_mean(1.0 - (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH))

    p_safe = ad.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    ce_map = -(tm * ad.log(p_safe) + (1.0 - target) * m_var * ad.log(1.0 - p_safe))
    active_sites = float(np.broadcast_to(m, (n, c, h, w)).sum())
    ce = ad.reduce_sum(ce_map) * (1.0 / active_sites)

    return 0.5 * dice + 0.5 * ce


def teacher_losses(
    out_a: ForwardOutput,
    out_b: ForwardOutput,
    y_fg_a,
    y_fg_b,
    y_bg_a,
    y_bg_b,
    mask,
) -> tuple[Var, Var, Var]:
    """Pre-training losses: (foreground, background, mixed).

    Each term scores view a over the mask region and view b over its
    complement; the mixed head is supervised with the foreground labels.
    Heads absent from the outputs (disabled branches) contribute 0.
    """
    m = _region_array(mask, np.asarray(y_fg_a).shape[-2:])
    mc = 1.0 - m
    l_fg = seg_loss(out_a.q_fg, y_fg_a, m) + seg_loss(out_b.q_fg, y_fg_b, mc)
    if out_a.q_bg is None:
        l_bg = Var(0.0)
    else:
        l_bg = seg_loss(out_a.q_bg, y_bg_a, m) + seg_loss(out_b.q_bg, y_bg_b, mc)
    if out_a.q_mix is None:
        l_m = Var(0.0)
    else:
        l_m = seg_loss(out_a.q_mix, y_fg_a, m) + seg_loss(out_b.q_mix, y_fg_b, mc)
    return l_fg, l_bg, l_m


class RegionWideParts(NamedTuple):
    l_fg_l: Var
    l_bg_l: Var
    l_fg_u: Var
    l_bg_u: Var
    l_rw: Var


def region_wide_loss(
    student_a: ForwardOutput,
    student_b: ForwardOutput,
    yhat_fg_a,
    yhat_fg_b,
    yhat_bg_a,
    yhat_bg_b,
    mask,
    alpha: float,
) -> RegionWideParts:
    """Labeled + pseudo-labeled supervision over complementary mask regions.

    View a carries ground truth under the mask and pseudo-labels under
    its complement (view b mirrored), so the labeled terms mask with
    (M, 1-M) and the unlabeled terms with (1-M, M); together they cover
    every cell exactly once.  `alpha` weights the unlabeled part.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    m = _region_array(mask, np.asarray(yhat_fg_a).shape[-2:])
    mc = 1.0 - m
    l_fg_l = seg_loss(student_a.q_fg, yhat_fg_a, m) + seg_loss(student_b.q_fg, yhat_fg_b, mc)
    l_fg_u = seg_loss(student_a.q_fg, yhat_fg_a, mc) + seg_loss(student_b.q_fg, yhat_fg_b, m)
    if student_a.q_bg is None:
        l_bg_l = Var(0.0)
        l_bg_u = Var(0.0)
    else:
        l_bg_l = seg_loss(student_a.q_bg, yhat_bg_a, m) + seg_loss(student_b.q_bg, yhat_bg_b, mc)
        l_bg_u = seg_loss(student_a.q_bg, yhat_bg_a, mc) + seg_loss(student_b.q_bg, yhat_bg_b, m)
    l_rw = l_fg_l + l_bg_l + alpha * (l_fg_u + l_bg_u)
    return RegionWideParts(l_fg_l, l_bg_l, l_fg_u, l_bg_u, l_rw)


def bcl_loss(q_fg, q_bg, q_mix) -> Var:
    """MSE(q_mix, q_fg) + MSE(1 - q_bg, q_fg).

    Zero exactly when the mixed prediction equals the foreground
    prediction and the background prediction is its complement.
    """
    q_fg, q_bg, q_mix = as_var(q_fg), as_var(q_bg), as_var(q_mix)
    if not (q_fg.value.shape == q_bg.value.shape == q_mix.value.shape):
        raise ValueError(
            f"shape mismatch: {q_fg.value.shape}, {q_bg.value.shape}, {q_mix.value.shape}"
        )
    direct = ad.reduce_mean((q_mix - q_fg) ** 2)
    inverse = ad.reduce_mean(((1.0 - q_bg) - q_fg) ** 2)
    return direct + inverse


def lambda_schedule(t: int, t_max: int) -> float:
    """Gaussian warm-up 0.1 * exp(-5 * (1 - t/t_max)^2), nondecreasing in t."""
    if t_max <= 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    if not 0 <= t <= t_max:
        raise ValueError(f"t={t} outside [0, {t_max}]")
    return 0.1 * math.exp(-5.0 * (1.0 - t / t_max) ** 2)
