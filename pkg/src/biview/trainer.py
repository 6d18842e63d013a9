"""Two-phase training: teacher pre-training on labeled data, then student
self-training with pseudo-labels, EMA teacher updates and bidirectional
consistency.

Every step draws labeled/unlabeled samples, applies flip/rotation
augmentation, builds a cut-mix mask per pair and optimises the student
with SGD; the teacher tracks the student as an exponential moving
average and supplies fresh pseudo-labels each step.  Inference and
evaluation use only the foreground branch.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augment import make_mask, mix_pair, mix_supervision
from .data import DatasetManifest, load_manifest, load_sample, normalize_image
from .errors import ConfigurationError
from .labels import onehot
from .losses import (
    LossBreakdown,
    bcl_loss,
    lambda_schedule,
    region_wide_loss,
    seg_loss,
    teacher_losses,
)
from .metrics import MetricReport
from .network import (
    PARAM_GROUPS,
    ArchSpec,
    ForwardOutput,
    ModelState,
    ema_update,
    forward_fg_only,
    forward_vars,
    init_model,
    make_param_vars,
    save_checkpoint,
)

__all__ = [
    "RunConfig",
    "PseudoLabelPair",
    "SGD",
    "pretrain_teacher",
    "make_pseudo_labels",
    "train_student",
    "train_plain_supervised",
    "evaluate",
    "run_full",
    "run_supervised",
    "ABLATION_VARIANTS",
    "run_ablation",
]

PRETRAIN_CSV = "pretrain_losses.csv"
LOSSES_CSV = "losses.csv"


@dataclass(frozen=True)
class RunConfig:
    """Every knob of one experiment; serialised verbatim next to its outputs."""

    data_dir: Path
    out_dir: Path
    labeled_batch: int = 4
    unlabeled_batch: int = 4
    pretrain_steps: int = 300
    train_steps: int = 1500
    learning_rate: float = 0.01
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    alpha: float = 0.5
    beta: float = 2.0 / 3.0
    ema_momentum: float = 0.99
    seed: int = 0
    encoder_widths: tuple[int, ...] = (8, 16, 32)
    use_bg_branch: bool = True
    use_mix_layer: bool = True
    use_bcl: bool = True

    def __post_init__(self):
        object.__setattr__(self, "data_dir", Path(self.data_dir))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        if self.labeled_batch < 2:
            raise ConfigurationError("labeled_batch must be >= 2 (cut-mix needs pairs)")
        if self.unlabeled_batch < 1:
            raise ConfigurationError("unlabeled_batch must be >= 1")
        if self.pretrain_steps < 1 or self.train_steps < 1:
            raise ConfigurationError("step counts must be positive")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0.0 < self.beta < 1.0:
            raise ConfigurationError("beta must lie in (0, 1)")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ConfigurationError("ema_momentum must lie in [0, 1]")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")
        if self.use_mix_layer and not self.use_bg_branch:
            raise ConfigurationError("the mixing layer requires the background branch")
        if self.use_bcl and not self.use_mix_layer:
            raise ConfigurationError("the consistency loss requires the mixing layer")

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Path):
                value = str(value)
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        kwargs = dict(obj)
        if "encoder_widths" in kwargs:
            kwargs["encoder_widths"] = tuple(kwargs["encoder_widths"])
        return cls(**kwargs)

    def write_echo(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / "config.json"
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return path


@dataclass
class PseudoLabelPair:
    """Binarised teacher predictions for one unlabeled batch."""

    p_fg: np.ndarray
    p_bg: np.ndarray | None
    source_step: int


class SGD:
    """SGD with classical momentum and decoupled-from-nothing weight decay.

    Parameters whose gradient is None (disabled branches) are skipped
    entirely, so unused heads stay at their initial values.
    """

    def __init__(self, learning_rate: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[tuple[str, str], np.ndarray] = {}

    def step(self, model: ModelState, param_vars) -> None:
        for group in PARAM_GROUPS:
            for name, var in param_vars.get(group, {}).items():
                if var.grad is None:
                    continue
                g = var.grad + self.weight_decay * var.value
                key = (group, name)
                v = self.momentum * self.velocity.get(key, 0.0) + g
                self.velocity[key] = v
                model.group(group)[name] = var.value - self.learning_rate * v


# -- data plumbing ---------------------------------------------------------------


@dataclass
class _Pool:
    """All samples of one split, normalised and label-encoded in memory."""

    images: list[np.ndarray]  # (C, H, W) float64, zero-mean/unit-variance
    fg_labels: list[np.ndarray]  # (c, H, W) binary rasters

    def __len__(self) -> int:
        return len(self.images)


def _class_channels(manifest: DatasetManifest) -> int:
    # single-target keeps one sigmoid channel; multi-target uses one
    # channel per class including the background class
    return 1 if manifest.class_count == 2 else manifest.class_count


def _fg_raster(label: np.ndarray, manifest: DatasetManifest) -> np.ndarray:
    if manifest.class_count == 2:
        return label.astype(np.float64)[None]
    return onehot(label, manifest.class_count)


def _load_pool(manifest: DatasetManifest, ids: list[str]) -> _Pool:
    images, fg_labels = [], []
    for sample_id in ids:
        sample = load_sample(manifest.root, sample_id, manifest)
        images.append(normalize_image(sample.image))
        fg_labels.append(_fg_raster(sample.label, manifest))
    return _Pool(images=images, fg_labels=fg_labels)


def _flip_rotate(rng: np.random.Generator, *rasters: np.ndarray) -> list[np.ndarray]:
    """One shared random flip/rotation for image and label rasters."""
    h, w = rasters[0].shape[-2:]
    k = int(rng.integers(4))
    if h != w:
        k = (k % 2) * 2  # only 180-degree rotations keep the shape
    flip = bool(rng.integers(2))
    out = []
    for raster in rasters:
        r = np.rot90(raster, k, axes=(-2, -1))
        if flip:
            r = r[..., ::-1]
        out.append(np.ascontiguousarray(r))
    return out


def _arch_for(manifest: DatasetManifest, config: RunConfig) -> ArchSpec:
    c, _, _ = manifest.shape
    return ArchSpec(
        input_channels=c,
        class_channels=_class_channels(manifest),
        encoder_widths=config.encoder_widths,
    )


def _forward_two_views(
    arch: ArchSpec, pv, xa: np.ndarray, xb: np.ndarray, with_bg: bool, with_mix: bool
) -> tuple[ForwardOutput, ForwardOutput]:
    """Run both mixed views through one batched forward, then split."""
    n = xa.shape[0]
    out = forward_vars(arch, pv, np.concatenate([xa, xb]), with_bg, with_mix)
    sizes = (n, n)
    q_fg_a, q_fg_b = ad.split_batch(out.q_fg, sizes)
    if out.q_bg is None:
        return ForwardOutput(q_fg=q_fg_a), ForwardOutput(q_fg=q_fg_b)
    q_bg_a, q_bg_b = ad.split_batch(out.q_bg, sizes)
    if out.q_mix is None:
        return (
            ForwardOutput(q_fg=q_fg_a, q_bg=q_bg_a),
            ForwardOutput(q_fg=q_fg_b, q_bg=q_bg_b),
        )
    q_mix_a, q_mix_b = ad.split_batch(out.q_mix, sizes)
    return (
        ForwardOutput(q_fg=q_fg_a, q_bg=q_bg_a, q_mix=q_mix_a),
        ForwardOutput(q_fg=q_fg_b, q_bg=q_bg_b, q_mix=q_mix_b),
    )


# -- teacher pre-training ----------------------------------------------------------


def pretrain_teacher(config: RunConfig, csv_name: str = PRETRAIN_CSV) -> ModelState:
    """Train a fresh model on cut-mixed labeled pairs; writes checkpoint + curve."""
    manifest = load_manifest(config.data_dir)
    if len(manifest.labeled_ids) < 2:
        raise ConfigurationError("pre-training needs at least 2 labeled samples")
    config.write_echo()
    pool = _load_pool(manifest, manifest.labeled_ids)
    h, w = manifest.shape[1:]

    init_ss, step_ss = np.random.SeedSequence(config.seed).spawn(2)
    teacher = init_model(_arch_for(manifest, config), np.random.default_rng(init_ss))
    rng = np.random.default_rng(step_ss)
    optimizer = SGD(config.learning_rate, config.sgd_momentum, config.weight_decay)

    pairs = config.labeled_batch // 2
    with open(config.out_dir / csv_name, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "l_fg", "l_bg", "l_m", "l_total"])
        for step in range(1, config.pretrain_steps + 1):
            idx = rng.integers(0, len(pool), size=2 * pairs)
            xa, xb, ya, yb, masks = [], [], [], [], []
            for p in range(pairs):
                i, j = int(idx[2 * p]), int(idx[2 * p + 1])
                img_i, lab_i = _flip_rotate(rng, pool.images[i], pool.fg_labels[i])
                img_j, lab_j = _flip_rotate(rng, pool.images[j], pool.fg_labels[j])
                mm = make_mask((h, w), config.beta, rng)
                a_img, b_img = mix_pair(img_i, img_j, mm)
                a_lab, b_lab = mix_pair(lab_i, lab_j, mm)
                xa.append(a_img)
                xb.append(b_img)
                ya.append(a_lab)
                yb.append(b_lab)
                masks.append(mm.mask)
            region = np.stack(masks)
            y_fg_a, y_fg_b = np.stack(ya), np.stack(yb)

            pv = make_param_vars(teacher)
            out_a, out_b = _forward_two_views(
                teacher.arch, pv, np.stack(xa), np.stack(xb),
                config.use_bg_branch, config.use_mix_layer,
            )
            l_fg, l_bg, l_m = teacher_losses(
                out_a, out_b, y_fg_a, y_fg_b, 1.0 - y_fg_a, 1.0 - y_fg_b, region
            )
            total = l_fg + l_bg + l_m
            total.backward()
            optimizer.step(teacher, pv)
            writer.writerow([step, float(l_fg), float(l_bg), float(l_m), float(total)])

    save_checkpoint(config.out_dir / "teacher.ckpt", teacher, "teacher", config.pretrain_steps)
    return teacher


# -- student self-training -----------------------------------------------------------


def make_pseudo_labels(
    teacher: ModelState, x_u: np.ndarray, source_step: int = 0, with_bg: bool = True
) -> PseudoLabelPair:
    """Binarise the teacher's predictions at 0.5; ties go to the foreground.

    No confidence filtering: every cell receives a pseudo-label.  The
    two branches are binarised independently, so p_fg and p_bg need not
    be complementary.
    """
    pv = make_param_vars(teacher)
    with ad.no_grad():
        out = forward_vars(teacher.arch, pv, x_u, with_bg=with_bg, with_mix=False)
    p_fg = (out.q_fg.value >= 0.5).astype(np.float64)
    p_bg = (out.q_bg.value >= 0.5).astype(np.float64) if with_bg else None
    return PseudoLabelPair(p_fg=p_fg, p_bg=p_bg, source_step=source_step)


def train_student(
    config: RunConfig,
    teacher: ModelState,
    step_callback=None,
) -> tuple[ModelState, ModelState]:
    """Self-training loop; returns (student, EMA teacher) and writes outputs.

    The student starts as a copy of the pre-trained teacher.  Each step
    mixes labeled and unlabeled samples under a fresh mask, supervises
    both views with ground-truth/pseudo-label composites, applies one
    SGD step to the student and one EMA step to the teacher.
    `step_callback(step, student, teacher)` observes live states.
    """
    manifest = load_manifest(config.data_dir)
    if not manifest.unlabeled_ids:
        raise ConfigurationError("student training needs unlabeled samples")
    config.write_echo()
    labeled = _load_pool(manifest, manifest.labeled_ids)
    unlabeled = _load_pool(manifest, manifest.unlabeled_ids)
    h, w = manifest.shape[1:]

    student = teacher.copy()
    teacher = teacher.copy()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[2])
    optimizer = SGD(config.learning_rate, config.sgd_momentum, config.weight_decay)
    pairs = min(config.labeled_batch, config.unlabeled_batch)

    with open(config.out_dir / LOSSES_CSV, "w", newline="") as fh:
        fh.write(LossBreakdown.csv_header() + "\n")
        for step in range(1, config.train_steps + 1):
            lab_idx = rng.integers(0, len(labeled), size=pairs)
            unl_idx = rng.integers(0, len(unlabeled), size=pairs)
            x_l, y_l, x_u, masks = [], [], [], []
            for p in range(pairs):
                img_l, lab_l = _flip_rotate(
                    rng, labeled.images[int(lab_idx[p])], labeled.fg_labels[int(lab_idx[p])]
                )
                (img_u,) = _flip_rotate(rng, unlabeled.images[int(unl_idx[p])])
                mm = make_mask((h, w), config.beta, rng)
                x_l.append(img_l)
                y_l.append(lab_l)
                x_u.append(img_u)
                masks.append(mm.mask)
            x_l, y_l, x_u = np.stack(x_l), np.stack(y_l), np.stack(x_u)
            region = np.stack(masks)

            pseudo = make_pseudo_labels(teacher, x_u, step, with_bg=config.use_bg_branch)
            y_bg_l = 1.0 - y_l
            p_bg = 1.0 - pseudo.p_fg if pseudo.p_bg is None else pseudo.p_bg

            xhat_a, xhat_b = mix_pair(x_l, x_u, region[:, None])
            yhat_fg_a = mix_supervision(y_l, pseudo.p_fg, region[:, None], "fg")
            yhat_fg_b = mix_supervision(y_l, pseudo.p_fg, region[:, None], "bg")
            yhat_bg_a = mix_supervision(y_bg_l, p_bg, region[:, None], "fg")
            yhat_bg_b = mix_supervision(y_bg_l, p_bg, region[:, None], "bg")

            pv = make_param_vars(student)
            out_a, out_b = _forward_two_views(
                student.arch, pv, xhat_a, xhat_b, config.use_bg_branch, config.use_mix_layer
            )
            parts = region_wide_loss(
                out_a, out_b, yhat_fg_a, yhat_fg_b, yhat_bg_a, yhat_bg_b, region, config.alpha
            )
            if config.use_bcl:
                l_bcl_a = bcl_loss(out_a.q_fg, out_a.q_bg, out_a.q_mix)
                l_bcl_b = bcl_loss(out_b.q_fg, out_b.q_bg, out_b.q_mix)
            else:
                l_bcl_a = l_bcl_b = None
            lambda_t = lambda_schedule(step, config.train_steps)
            l_bcl = (l_bcl_a + l_bcl_b) if l_bcl_a is not None else None
            l_total = parts.l_rw + lambda_t * l_bcl if l_bcl is not None else parts.l_rw

            l_total.backward()
            optimizer.step(student, pv)
            teacher = ema_update(teacher, student, config.ema_momentum)

            breakdown = LossBreakdown(
                l_fg_l=float(parts.l_fg_l),
                l_bg_l=float(parts.l_bg_l),
                l_fg_u=float(parts.l_fg_u),
                l_bg_u=float(parts.l_bg_u),
                l_rw=float(parts.l_rw),
                l_bcl_a=float(l_bcl_a) if l_bcl_a is not None else 0.0,
                l_bcl_b=float(l_bcl_b) if l_bcl_b is not None else 0.0,
                l_bcl=float(l_bcl) if l_bcl is not None else 0.0,
                l_total=float(l_total),
                lambda_t=lambda_t,
                alpha=config.alpha,
            )
            fh.write(breakdown.csv_row() + "\n")
            if step_callback is not None:
                step_callback(step, student, teacher)

    save_checkpoint(config.out_dir / "student.ckpt", student, "student", config.train_steps)
    save_checkpoint(config.out_dir / "teacher.ckpt", teacher, "teacher", config.train_steps)
    return student, teacher


# -- evaluation ------------------------------------------------------------------------


def evaluate(
    model: ModelState, manifest: DatasetManifest, ids: list[str] | None = None
) -> MetricReport:
    """Score the foreground branch on a split; argmax for multi-target.

    Binarisation is threshold-0.5 for single-target and channel argmax
    for multi-target; each foreground class contributes one metrics row
    per sample.
    """
    if ids is None:
        ids = manifest.test_ids
    if not ids:
        raise ValueError("evaluate needs a non-empty id list")
    report = MetricReport()
    for sample_id in ids:
        sample = load_sample(manifest.root, sample_id, manifest)
        q_fg = forward_fg_only(model, normalize_image(sample.image))
        if manifest.class_count == 2:
            pred = q_fg[0] >= 0.5
            report.add(sample_id, 1, pred, sample.label > 0)
        else:
            pred_label = np.argmax(q_fg, axis=0)
            for k in range(1, manifest.class_count):
                report.add(sample_id, k, pred_label == k, sample.label == k)
    return report


# -- pipelines ----------------------------------------------------------------------------


def run_full(config: RunConfig) -> MetricReport:
    """pretrain -> self-train -> evaluate, all artifacts in config.out_dir."""
    manifest = load_manifest(config.data_dir)
    teacher = pretrain_teacher(config)
    student, _ = train_student(config, teacher)
    report = evaluate(student, manifest)
    report.write_csv(config.out_dir / "metrics.csv")
    report.write_summary(config.out_dir / "metrics_summary.json")
    return report


def train_plain_supervised(config: RunConfig, steps: int) -> ModelState:
    """Foreground-only training on labeled images; no mixing, no pseudo-labels.

    This is the conventional supervised baseline: flips/rotations are the
    only augmentation and the loss is the plain Dice+CE over whole images.
    """
    manifest = load_manifest(config.data_dir)
    if not manifest.labeled_ids:
        raise ConfigurationError("supervised training needs labeled samples")
    config.write_echo()
    pool = _load_pool(manifest, manifest.labeled_ids)

    init_ss, step_ss = np.random.SeedSequence(config.seed).spawn(2)
    model = init_model(_arch_for(manifest, config), np.random.default_rng(init_ss))
    rng = np.random.default_rng(step_ss)
    optimizer = SGD(config.learning_rate, config.sgd_momentum, config.weight_decay)

    with open(config.out_dir / LOSSES_CSV, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "l_fg"])
        for step in range(1, steps + 1):
            idx = rng.integers(0, len(pool), size=config.labeled_batch)
            images, targets = [], []
            for i in idx:
                img, lab = _flip_rotate(rng, pool.images[int(i)], pool.fg_labels[int(i)])
                images.append(img)
                targets.append(lab)
            pv = make_param_vars(model)
            out = forward_vars(model.arch, pv, np.stack(images), with_bg=False)
            loss = seg_loss(out.q_fg, np.stack(targets))
            loss.backward()
            optimizer.step(model, pv)
            writer.writerow([step, float(loss)])

    save_checkpoint(config.out_dir / "student.ckpt", model, "supervised", steps)
    return model


def run_supervised(config: RunConfig) -> MetricReport:
    """Plain supervised baseline trained for the full step budget."""
    model = train_plain_supervised(config, config.pretrain_steps + config.train_steps)
    manifest = load_manifest(config.data_dir)
    report = evaluate(model, manifest)
    report.write_csv(config.out_dir / "metrics.csv")
    report.write_summary(config.out_dir / "metrics_summary.json")
    return report


ABLATION_VARIANTS: dict[str, dict] = {
    "supervised": {"supervised": True},
    "fg_only": {"use_bg_branch": False, "use_mix_layer": False, "use_bcl": False},
    "fg_bg": {"use_bg_branch": True, "use_mix_layer": False, "use_bcl": False},
    "fg_bg_mix": {"use_bg_branch": True, "use_mix_layer": True, "use_bcl": False},
    "full": {"use_bg_branch": True, "use_mix_layer": True, "use_bcl": True},
}


def run_ablation(
    config: RunConfig, n_seeds: int, variants: dict[str, dict] | None = None
) -> list[tuple[str, int, str, float]]:
    """Run every variant over `n_seeds` training seeds on one fixed dataset.

    Returns (variant, seed, metric, value) rows; the dataset is shared,
    only initialisation and batch order vary with the seed.
    """
    if variants is None:
        variants = ABLATION_VARIANTS
    rows: list[tuple[str, int, str, float]] = []
    for name, overrides in variants.items():
        for i in range(n_seeds):
            seed = config.seed + i
            run_dir = config.out_dir / name / f"seed_{seed}"
            if overrides.get("supervised"):
                variant_config = replace(config, seed=seed, out_dir=run_dir)
                report = run_supervised(variant_config)
            else:
                variant_config = replace(config, seed=seed, out_dir=run_dir, **overrides)
                report = run_full(variant_config)
            for metric, value in report.means().items():
                rows.append((name, seed, metric, value))
    return rows
