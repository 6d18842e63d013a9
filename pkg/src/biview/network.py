"""Shared-encoder / dual-decoder segmentation model with a mixing head.

One encoder feeds two structurally identical decoders: a foreground
decoder and a background decoder, each ending in a sigmoid so outputs
are per-channel probabilities.  A 1x1 "mixing head" fuses the two
probability maps into a background-guided foreground prediction.
Inference uses only the encoder and the foreground decoder.

The backbone is a small 2-D U-Net: double 3x3 convolutions per level,
2x2 average pooling between levels, nearest-neighbour upsampling and
skip concatenation on the way back up.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import CorruptCheckpointError

__all__ = [
    "ArchSpec",
    "ModelState",
    "ForwardOutput",
    "init_model",
    "make_param_vars",
    "forward_vars",
    "forward",
    "forward_fg_only",
    "ema_update",
    "parameter_count",
    "fg_path_parameter_count",
    "save_checkpoint",
    "load_checkpoint",
]

PARAM_GROUPS = ("encoder", "fg_decoder", "bg_decoder", "mix_head")


@dataclass(frozen=True)
class ArchSpec:
    """Structure of the model: channels and per-level encoder widths."""

    input_channels: int
    class_channels: int
    encoder_widths: tuple[int, ...] = (8, 16, 32)

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        if self.input_channels < 1 or self.class_channels < 1:
            raise ValueError("input_channels and class_channels must be >= 1")
        if any(w < 1 for w in self.encoder_widths):
            raise ValueError(f"encoder widths must be positive, got {self.encoder_widths}")
        if self.depth < 2:
            raise ValueError("architecture needs at least 2 downsampling stages")

    @property
    def depth(self) -> int:
        """Number of 2x downsampling stages."""
        return len(self.encoder_widths) - 1

    def to_json(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "class_channels": self.class_channels,
            "encoder_widths": list(self.encoder_widths),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ArchSpec":
        return cls(
            input_channels=int(obj["input_channels"]),
            class_channels=int(obj["class_channels"]),
            encoder_widths=tuple(int(w) for w in obj["encoder_widths"]),
        )


ParamGroup = dict[str, np.ndarray]


@dataclass
class ModelState:
    """All parameters of one model instance, grouped by component."""

    arch: ArchSpec
    encoder: ParamGroup = field(default_factory=dict)
    fg_decoder: ParamGroup = field(default_factory=dict)
    bg_decoder: ParamGroup = field(default_factory=dict)
    mix_head: ParamGroup = field(default_factory=dict)

    def group(self, name: str) -> ParamGroup:
        return getattr(self, name)

    def copy(self) -> "ModelState":
        return ModelState(
            arch=self.arch,
            encoder={k: v.copy() for k, v in self.encoder.items()},
            fg_decoder={k: v.copy() for k, v in self.fg_decoder.items()},
            bg_decoder={k: v.copy() for k, v in self.bg_decoder.items()},
            mix_head={k: v.copy() for k, v in self.mix_head.items()},
        )


@dataclass
class ForwardOutput:
    """Per-channel probability maps from the three heads."""

    q_fg: Var
    q_bg: Var | None = None
    q_mix: Var | None = None


def _conv_shapes(arch: ArchSpec) -> dict[str, list[tuple[str, tuple[int, ...]]]]:
    """Declared parameter ordering per group: list of (name, shape)."""
    widths = arch.encoder_widths
    enc: list[tuple[str, tuple[int, ...]]] = []
    prev = arch.input_channels
    for i, w in enumerate(widths):
        enc.append((f"enc{i}a_w", (w, prev, 3, 3)))
        enc.append((f"enc{i}a_b", (w,)))
        enc.append((f"enc{i}b_w", (w, w, 3, 3)))
        enc.append((f"enc{i}b_b", (w,)))
        prev = w
    dec: list[tuple[str, tuple[int, ...]]] = []
    for i in range(len(widths) - 2, -1, -1):
        cin = widths[i + 1] + widths[i]
        dec.append((f"dec{i}a_w", (widths[i], cin, 3, 3)))
        dec.append((f"dec{i}a_b", (widths[i],)))
        dec.append((f"dec{i}b_w", (widths[i], widths[i], 3, 3)))
        dec.append((f"dec{i}b_b", (widths[i],)))
    dec.append(("out_w", (arch.class_channels, widths[0], 1, 1)))
    dec.append(("out_b", (arch.class_channels,)))
    mix = [
        ("mix_w", (arch.class_channels, 2 * arch.class_channels, 1, 1)),
        ("mix_b", (arch.class_channels,)),
    ]
    return {"encoder": enc, "fg_decoder": dec, "bg_decoder": dec, "mix_head": mix}


def init_model(arch: ArchSpec, rng: np.random.Generator) -> ModelState:
    """He weights, small uniform biases; fg and bg decoders get distinct draws.

    Nonzero biases keep pre-activations off the exact ReLU kink even in
    dead upstream regions, which finite-difference gradient checks need.
    """
    shapes = _conv_shapes(arch)
    model = ModelState(arch=arch)
    fan_in = 1
    for group_name in PARAM_GROUPS:
        group = model.group(group_name)
        for name, shape in shapes[group_name]:
            if name.endswith("_b"):
                bound = 1.0 / np.sqrt(fan_in)
                group[name] = rng.uniform(-bound, bound, size=shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                group[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return model


def parameter_count(model: ModelState, groups: tuple[str, ...] = PARAM_GROUPS) -> int:
    return sum(int(p.size) for g in groups for p in model.group(g).values())


def fg_path_parameter_count(model: ModelState) -> int:
    """Parameters touched by inference: encoder plus foreground decoder."""
    return parameter_count(model, ("encoder", "fg_decoder"))


# -- forward pass -------------------------------------------------------------

ParamVars = dict[str, dict[str, Var]]


def make_param_vars(model: ModelState) -> ParamVars:
    """Wrap every parameter array in a graph leaf, grouped like the model."""
    return {
        g: {name: Var(arr) for name, arr in model.group(g).items()} for g in PARAM_GROUPS
    }


def _double_conv(x: Var, params: dict[str, Var], prefix: str) -> Var:
    x = ad.relu(ad.conv2d(x, params[f"{prefix}a_w"], params[f"{prefix}a_b"]))
    return ad.relu(ad.conv2d(x, params[f"{prefix}b_w"], params[f"{prefix}b_b"]))


def _encode(arch: ArchSpec, enc: dict[str, Var], x: Var) -> list[Var]:
    """Per-level features; the last entry is the bottleneck."""
    features = []
    h = x
    for i in range(len(arch.encoder_widths)):
        if i > 0:
            h = ad.avgpool2(h)
        h = _double_conv(h, enc, f"enc{i}")
        features.append(h)
    return features


def _decode(arch: ArchSpec, dec: dict[str, Var], features: list[Var]) -> Var:
    h = features[-1]
    for i in range(len(arch.encoder_widths) - 2, -1, -1):
        h = ad.concat([features[i], ad.upsample2(h)], axis=1)
        h = _double_conv(h, dec, f"dec{i}")
    return ad.sigmoid(ad.conv2d(h, dec["out_w"], dec["out_b"]))


def _check_input(arch: ArchSpec, x: np.ndarray | Var) -> tuple[Var, bool]:
    value = x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
    batched = value.ndim == 4
    if not batched:
        if value.ndim != 3:
            raise ValueError(f"expected (C, H, W) or (N, C, H, W), got shape {value.shape}")
        value = value[None]
    n, c, h, w = value.shape
    if c != arch.input_channels:
        raise ValueError(f"expected {arch.input_channels} input channels, got {c}")
    factor = 2**arch.depth
    if h % factor or w % factor:
        raise ValueError(f"spatial shape {(h, w)} must be divisible by {factor}")
    if isinstance(x, Var) and batched:
        return x, batched
    return Var(value), batched


def forward_vars(
    arch: ArchSpec,
    params: ParamVars,
    x: np.ndarray | Var,
    with_bg: bool = True,
    with_mix: bool = True,
) -> ForwardOutput:
    """Differentiable forward pass on a (N, C, H, W) batch.

    The mixing head consumes the concatenated fg/bg probability maps and
    re-applies a sigmoid so its output is a probability as well.
    """
    x_var, _ = _check_input(arch, x)
    features = _encode(arch, params["encoder"], x_var)
    q_fg = _decode(arch, params["fg_decoder"], features)
    if not with_bg:
        return ForwardOutput(q_fg=q_fg)
    q_bg = _decode(arch, params["bg_decoder"], features)
    if not with_mix:
        return ForwardOutput(q_fg=q_fg, q_bg=q_bg)
    mixed = ad.conv2d(
        ad.concat([q_fg, q_bg], axis=1), params["mix_head"]["mix_w"], params["mix_head"]["mix_b"]
    )
    return ForwardOutput(q_fg=q_fg, q_bg=q_bg, q_mix=ad.sigmoid(mixed))


def forward(model: ModelState, x: np.ndarray) -> ForwardOutput:
    """Forward pass returning all three probability maps (graph-connected)."""
    x_var, batched = _check_input(model.arch, x)
    out = forward_vars(model.arch, make_param_vars(model), x_var)
    if not batched:
        squeeze = lambda v: ad.reshape(v, v.value.shape[1:])  # noqa: E731
        out = ForwardOutput(q_fg=squeeze(out.q_fg), q_bg=squeeze(out.q_bg), q_mix=squeeze(out.q_mix))
    return out


def forward_fg_only(model: ModelState, x: np.ndarray) -> np.ndarray:
    """Foreground probabilities touching only encoder and fg-decoder parameters."""
    _, batched = _check_input(model.arch, x)
    params = {
        "encoder": {k: Var(v) for k, v in model.encoder.items()},
        "fg_decoder": {k: Var(v) for k, v in model.fg_decoder.items()},
    }
    with ad.no_grad():
        out = forward_vars(model.arch, params, x, with_bg=False)
    value = out.q_fg.value
    return value if batched else value[0]


# -- teacher updates -----------------------------------------------------------


def ema_update(teacher: ModelState, student: ModelState, momentum: float) -> ModelState:
    """New teacher with every parameter = momentum*teacher + (1-momentum)*student."""
    if teacher.arch != student.arch:
        raise ValueError("teacher and student architectures differ")
    if not 0.0 <= momentum <= 1.0:
        raise ValueError(f"momentum must lie in [0, 1], got {momentum}")
    updated = ModelState(arch=teacher.arch)
    for group_name in PARAM_GROUPS:
        t_group, s_group = teacher.group(group_name), student.group(group_name)
        updated_group = updated.group(group_name)
        for name, t_param in t_group.items():
            updated_group[name] = momentum * t_param + (1.0 - momentum) * s_group[name]
    return updated


# -- checkpoints ----------------------------------------------------------------

CHECKPOINT_FORMAT = "biview-checkpoint-v1"


def save_checkpoint(path, model: ModelState, role: str, step: int) -> None:
    """JSON header + flat little-endian float32 blob in declared order."""
    order = [
        [group, name, list(arr.shape)]
        for group in PARAM_GROUPS
        for name, arr in model.group(group).items()
    ]
    header = {
        "format": CHECKPOINT_FORMAT,
        "arch": model.arch.to_json(),
        "role": role,
        "step": int(step),
        "param_order": order,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(
        model.group(group)[name].astype("<f4").tobytes() for group, name, _ in order
    )
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(blob)


def load_checkpoint(path) -> tuple[ModelState, str, int]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise CorruptCheckpointError(f"{path}: file too short for a header")
    (header_len,) = struct.unpack("<I", raw[:4])
    if len(raw) < 4 + header_len:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[4 : 4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpointError(f"{path}: unknown format tag {header.get('format')!r}")
    order = header["param_order"]
    expected = sum(int(np.prod(shape)) for _, _, shape in order) * 4
    blob = raw[4 + header_len :]
    if len(blob) != expected:
        raise CorruptCheckpointError(
            f"{path}: parameter blob is {len(blob)} bytes, header declares {expected}"
        )
    model = ModelState(arch=ArchSpec.from_json(header["arch"]))
    offset = 0
    for group, name, shape in order:
        count = int(np.prod(shape))
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        model.group(group)[name] = values.astype(np.float64).reshape(shape)
        offset += count * 4
    return model, header["role"], int(header["step"])
