"""Synthetic 2-D segmentation datasets with genuinely ambiguous boundaries.

Each sample is one grayscale (or multi-channel) image plus a dense
label grid.  Foreground objects are random ellipses and convex
polygons; their edges are blurred and the whole image carries texture
noise, so cells near object boundaries cannot be classified reliably
by intensity alone.  Labeled / unlabeled / test splits are recorded in
a JSON manifest; samples live in a small self-describing binary format
that round-trips bit-exactly.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigurationError, CorruptSampleError

__all__ = [
    "GeneratorConfig",
    "Sample",
    "DatasetManifest",
    "generate_synthetic",
    "save_sample",
    "load_sample",
    "save_manifest",
    "load_manifest",
    "normalize_image",
]

SAMPLE_MAGIC = b"CVBM1"
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class GeneratorConfig:
    """Everything the generator needs for one dataset."""

    out_dir: Path
    shape: tuple[int, int, int] = (1, 32, 32)  # (C, H, W)
    foreground_classes: int = 1  # K: 1 (single-target) or 3 (multi-target)
    n_labeled: int = 4
    n_unlabeled: int = 36
    n_test: int = 10
    # calibrated so roughly 10% of boundary-adjacent cells defeat the best
    # single intensity threshold
    noise_sigma: float = 0.05
    edge_blur: float = 0.7
    # harder regimes: small object-bright blobs that belong to the
    # background (up to this many per image), and a random-direction
    # intensity ramp across the background
    max_distractors: int = 0
    background_gradient: float = 0.0
    # characteristic object radius as a fraction of the grid side;
    # None picks 0.28 for single-target and 0.15 for multi-target
    object_scale: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        c, h, w = self.shape
        if len(self.shape) != 3 or c < 1 or h < 8 or w < 8:
            raise ConfigurationError(f"invalid shape {self.shape}: need (C>=1, H>=8, W>=8)")
        if self.foreground_classes < 1:
            raise ConfigurationError("foreground_classes must be >= 1")
        if min(self.n_labeled, self.n_unlabeled, self.n_test) < 1:
            raise ConfigurationError("every split needs at least one sample")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if self.max_distractors < 0 or self.background_gradient < 0:
            raise ConfigurationError("max_distractors and background_gradient must be >= 0")


@dataclass
class Sample:
    """One image/label pair; image float32 in [0, 1], label uint8 in {0..K}."""

    image: np.ndarray  # (C, H, W)
    label: np.ndarray  # (H, W)
    id: str

    def __post_init__(self):
        if self.image.shape[1:] != self.label.shape:
            raise ValueError(
                f"image spatial shape {self.image.shape[1:]} != label shape {self.label.shape}"
            )


@dataclass
class DatasetManifest:
    """Split bookkeeping; `class_count` counts background plus targets (K+1)."""

    class_count: int
    labeled_ids: list[str]
    unlabeled_ids: list[str]
    test_ids: list[str]
    generator_seed: int
    shape: tuple[int, int, int]
    root: Path | None = field(default=None, compare=False)

    def all_ids(self) -> list[str]:
        return list(self.labeled_ids) + list(self.unlabeled_ids) + list(self.test_ids)

    def to_json(self) -> dict:
        return {
            "class_count": self.class_count,
            "labeled_ids": list(self.labeled_ids),
            "unlabeled_ids": list(self.unlabeled_ids),
            "test_ids": list(self.test_ids),
            "generator_seed": self.generator_seed,
            "shape": list(self.shape),
        }


# -- binary sample format ------------------------------------------------------
#
# magic "CVBM1" | u32le C, H, W, K | float32 image (C*H*W) | uint8 label (H*W)


def sample_path(root: Path | str, sample_id: str) -> Path:
    return Path(root) / f"{sample_id}.bin"


def save_sample(root: Path | str, sample: Sample, foreground_classes: int) -> Path:
    c, h, w = sample.image.shape
    path = sample_path(root, sample.id)
    with open(path, "wb") as fh:
        fh.write(SAMPLE_MAGIC)
        fh.write(struct.pack("<4I", c, h, w, foreground_classes))
        fh.write(sample.image.astype("<f4").tobytes())
        fh.write(sample.label.astype(np.uint8).tobytes())
    return path


def load_sample(root: Path | str, sample_id: str, manifest: DatasetManifest | None = None) -> Sample:
    """Read one sample; validates layout and (optionally) the manifest contract."""
    path = sample_path(root, sample_id)
    if not path.exists():
        raise FileNotFoundError(f"no sample {sample_id!r} under {root}")
    raw = path.read_bytes()
    header_size = len(SAMPLE_MAGIC) + 16
    if len(raw) < header_size or raw[: len(SAMPLE_MAGIC)] != SAMPLE_MAGIC:
        raise CorruptSampleError(f"{path}: bad magic or truncated header")
    c, h, w, k = struct.unpack("<4I", raw[len(SAMPLE_MAGIC) : header_size])
    expected = header_size + c * h * w * 4 + h * w
    if len(raw) != expected:
        raise CorruptSampleError(f"{path}: {len(raw)} bytes, layout requires {expected}")
    image = np.frombuffer(raw, dtype="<f4", count=c * h * w, offset=header_size)
    image = image.reshape(c, h, w).copy()
    label = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=header_size + c * h * w * 4)
    label = label.reshape(h, w).copy()
    if label.max(initial=0) > k:
        raise CorruptSampleError(f"{path}: label values exceed declared class count {k}")
    if manifest is not None:
        if (c, h, w) != tuple(manifest.shape) or k + 1 != manifest.class_count:
            raise CorruptSampleError(
                f"{path}: shape {(c, h, w)}/K={k} disagrees with manifest "
                f"{tuple(manifest.shape)}/K={manifest.class_count - 1}"
            )
    return Sample(image=image, label=label, id=sample_id)


def save_manifest(root: Path | str, manifest: DatasetManifest) -> Path:
    path = Path(root) / MANIFEST_NAME
    path.write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(root: Path | str) -> DatasetManifest:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} under {root}")
    obj = json.loads(path.read_text())
    return DatasetManifest(
        class_count=int(obj["class_count"]),
        labeled_ids=list(obj["labeled_ids"]),
        unlabeled_ids=list(obj["unlabeled_ids"]),
        test_ids=list(obj["test_ids"]),
        generator_seed=int(obj["generator_seed"]),
        shape=tuple(obj["shape"]),
        root=Path(root),
    )


# -- synthetic rendering ---------------------------------------------------------


def _ellipse_mask(h: int, w: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    cy = rng.uniform(0.2 * h, 0.8 * h)
    cx = rng.uniform(0.2 * w, 0.8 * w)
    ry = rng.uniform(0.5, 1.0) * scale * h
    rx = rng.uniform(0.5, 1.0) * scale * w
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    yr = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
    xr = -(yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)
    return (yr / ry) ** 2 + (xr / rx) ** 2 <= 1.0


def _polygon_mask(h: int, w: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Random convex polygon as an intersection of half-planes."""
    n_vertices = int(rng.integers(3, 8))
    cy = rng.uniform(0.2 * h, 0.8 * h)
    cx = rng.uniform(0.2 * w, 0.8 * w)
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n_vertices))
    radii = rng.uniform(0.6, 1.1, size=n_vertices) * scale * min(h, w)
    ys = cy + radii * np.sin(angles)
    xs = cx + radii * np.cos(angles)
    yy, xx = np.mgrid[0:h, 0:w]
    inside = np.ones((h, w), dtype=bool)
    for i in range(n_vertices):
        y0, x0 = ys[i], xs[i]
        y1, x1 = ys[(i + 1) % n_vertices], xs[(i + 1) % n_vertices]
        # vertices are in counter-clockwise angular order, so the interior
        # is on the left of every directed edge
        inside &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return inside


def _place_objects(
    h: int, w: int, k_classes: int, rng: np.random.Generator, scale: float | None = None
) -> np.ndarray:
    """Label grid with k_classes non-overlapping objects (classes 1..K)."""
    label = np.zeros((h, w), dtype=np.uint8)
    occupied = np.zeros((h, w), dtype=bool)
    if scale is None:
        scale = 0.28 if k_classes == 1 else 0.15
    min_area = max(3.0, 0.6 * (scale * min(h, w)) ** 2)
    for k in range(1, k_classes + 1):
        for _ in range(500):
            maker = _ellipse_mask if rng.uniform() < 0.5 else _polygon_mask
            mask = maker(h, w, scale, rng)
            if mask.sum() < min_area:
                continue
            if k_classes > 1 and (_dilate(mask) & occupied).any():
                continue
            label[mask] = k
            occupied |= mask
            break
        else:
            raise RuntimeError("could not place a non-overlapping object in 500 tries")
    return label


def _dilate(mask: np.ndarray) -> np.ndarray:
    """One step of 4-neighbour dilation (keeps distinct objects separated)."""
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _render_sample(
    shape: tuple[int, int, int],
    config: GeneratorConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    c, h, w = shape
    k_classes = config.foreground_classes
    label = _place_objects(h, w, k_classes, rng, config.object_scale)
    base = rng.uniform(0.30, 0.42)
    intensity = np.full((h, w), base)
    if config.background_gradient > 0:
        # a random-direction ramp across the image defeats global thresholds
        theta = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:h, 0:w]
        ramp = (np.cos(theta) * yy / h + np.sin(theta) * xx / w) * config.background_gradient
        intensity = intensity + ramp - ramp.mean()
    deltas = {}
    for k in range(1, k_classes + 1):
        deltas[k] = 0.26 + 0.08 * (k - 1) + rng.uniform(-0.03, 0.03)
        intensity = intensity + deltas[k] * (label == k)
    if config.max_distractors > 0:
        occupied = _dilate(label > 0)
        for _ in range(int(rng.integers(0, config.max_distractors + 1))):
            for _ in range(100):
                blob = _ellipse_mask(h, w, 0.09, rng)
                if blob.sum() >= 2 and not (_dilate(blob) & occupied).any():
                    # object-like brightness, but still background in the label
                    intensity = intensity + (deltas[1] + rng.uniform(-0.04, 0.02)) * blob
                    occupied |= _dilate(blob)
                    break
    # blurring the intensity (not the label) leaves boundary cells ambiguous
    intensity = gaussian_filter(intensity, sigma=config.edge_blur, mode="nearest")
    image = np.empty((c, h, w))
    for ch in range(c):
        noisy = intensity + rng.normal(0.0, config.noise_sigma, size=(h, w))
        image[ch] = np.clip(noisy, 0.0, 1.0)
    return image.astype(np.float32), label


def generate_synthetic(config: GeneratorConfig, seed: int) -> DatasetManifest:
    """Write a full dataset under config.out_dir; deterministic in (config, seed)."""
    root = config.out_dir
    root.mkdir(parents=True, exist_ok=True)
    counts = (("lab", config.n_labeled), ("unl", config.n_unlabeled), ("tst", config.n_test))
    total = sum(n for _, n in counts)
    children = np.random.SeedSequence(seed).spawn(total)
    ids: dict[str, list[str]] = {"lab": [], "unl": [], "tst": []}
    child_iter = iter(children)
    for prefix, n in counts:
        for i in range(n):
            rng = np.random.default_rng(next(child_iter))
            image, label = _render_sample(config.shape, config, rng)
            sample = Sample(image=image, label=label, id=f"{prefix}-{i:03d}")
            save_sample(root, sample, config.foreground_classes)
            ids[prefix].append(sample.id)
    manifest = DatasetManifest(
        class_count=config.foreground_classes + 1,
        labeled_ids=ids["lab"],
        unlabeled_ids=ids["unl"],
        test_ids=ids["tst"],
        generator_seed=int(seed),
        shape=config.shape,
        root=root,
    )
    save_manifest(root, manifest)
    return manifest


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Zero-mean / unit-variance view of one image (training-time transform)."""
    image = np.asarray(image, dtype=np.float64)
    return (image - image.mean()) / (image.std() + 1e-8)
