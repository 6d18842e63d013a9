from __future__ import annotations

import numpy as np
import pytest

from biview.errors import CorruptCheckpointError
from biview.network import (
    ArchSpec,
    ema_update,
    fg_path_parameter_count,
    forward,
    forward_fg_only,
    init_model,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)

from conftest import TINY_ARCH


def _random_input(arch, rng, n=None):
    shape = (arch.input_channels, 8, 8) if n is None else (n, arch.input_channels, 8, 8)
    return rng.uniform(0, 1, size=shape)


def test_arch_spec_validation():
    with pytest.raises(ValueError):
        ArchSpec(input_channels=1, class_channels=1, encoder_widths=(4, 8))  # depth 1
    with pytest.raises(ValueError):
        ArchSpec(input_channels=1, class_channels=1, encoder_widths=(4, 0, 8))
    with pytest.raises(ValueError):
        ArchSpec(input_channels=0, class_channels=1)
    assert ArchSpec(input_channels=1, class_channels=1).depth == 2


def test_forward_shapes_and_range(tiny_model):
    rng = np.random.default_rng(0)
    x = _random_input(TINY_ARCH, rng)
    out = forward(tiny_model, x)
    for q in (out.q_fg, out.q_bg, out.q_mix):
        assert q.value.shape == (1, 8, 8)
        assert np.all(q.value > 0.0) and np.all(q.value < 1.0)
    batched = forward(tiny_model, _random_input(TINY_ARCH, rng, n=3))
    assert batched.q_fg.value.shape == (3, 1, 8, 8)


def test_forward_rejects_bad_shapes(tiny_model):
    with pytest.raises(ValueError):
        forward(tiny_model, np.zeros((2, 8, 8)))  # wrong channels
    with pytest.raises(ValueError):
        forward(tiny_model, np.zeros((1, 10, 10)))  # not divisible by 4


def test_dual_decoders_same_structure(tiny_model):
    assert set(tiny_model.fg_decoder) == set(tiny_model.bg_decoder)
    for name in tiny_model.fg_decoder:
        assert tiny_model.fg_decoder[name].shape == tiny_model.bg_decoder[name].shape


def test_mix_head_maps_2c_to_c(tiny_model):
    c = TINY_ARCH.class_channels
    assert tiny_model.mix_head["mix_w"].shape == (c, 2 * c, 1, 1)


def test_bg_perturbation_moves_mix_but_not_fg(tiny_model):
    rng = np.random.default_rng(1)
    x = _random_input(TINY_ARCH, rng)
    before = forward(tiny_model, x)
    poisoned = tiny_model.copy()
    for name in poisoned.bg_decoder:
        poisoned.bg_decoder[name] = poisoned.bg_decoder[name] + 0.3
    after = forward(poisoned, x)
    assert np.array_equal(before.q_fg.value, after.q_fg.value)
    assert not np.array_equal(before.q_mix.value, after.q_mix.value)


def test_fg_only_matches_full_forward_bitwise(tiny_model):
    rng = np.random.default_rng(2)
    x = _random_input(TINY_ARCH, rng)
    assert np.array_equal(forward_fg_only(tiny_model, x), forward(tiny_model, x).q_fg.value)


def test_fg_only_ignores_poisoned_heads(tiny_model):
    rng = np.random.default_rng(3)
    x = _random_input(TINY_ARCH, rng)
    reference = forward_fg_only(tiny_model, x)
    poisoned = tiny_model.copy()
    for group in (poisoned.bg_decoder, poisoned.mix_head):
        for name in group:
            group[name] = rng.normal(size=group[name].shape)
    assert np.array_equal(forward_fg_only(poisoned, x), reference)


def test_fg_only_depends_on_encoder(tiny_model):
    rng = np.random.default_rng(4)
    x = _random_input(TINY_ARCH, rng)
    reference = forward_fg_only(tiny_model, x)
    perturbed = tiny_model.copy()
    perturbed.encoder["enc0a_w"] = perturbed.encoder["enc0a_w"] + 0.1
    assert not np.array_equal(forward_fg_only(perturbed, x), reference)


def test_fg_path_parameter_count_smaller(tiny_model):
    assert fg_path_parameter_count(tiny_model) < parameter_count(tiny_model)


def test_ema_formula():
    rng = np.random.default_rng(5)
    teacher = init_model(TINY_ARCH, rng)
    student = init_model(TINY_ARCH, rng)
    for group in ("encoder", "fg_decoder", "bg_decoder", "mix_head"):
        for name in teacher.group(group):
            teacher.group(group)[name] = np.zeros_like(teacher.group(group)[name])
            student.group(group)[name] = np.ones_like(student.group(group)[name])
    updated = ema_update(teacher, student, momentum=0.99)
    assert np.allclose(updated.encoder["enc0a_w"], 0.01, atol=1e-15)
    unchanged = ema_update(teacher, student, momentum=1.0)
    assert np.all(unchanged.mix_head["mix_w"] == 0.0)


def test_ema_converges_geometrically():
    rng = np.random.default_rng(6)
    teacher = init_model(TINY_ARCH, rng)
    student = init_model(TINY_ARCH, rng)
    momentum = 0.9
    gaps = []
    for _ in range(5):
        gaps.append(float(np.abs(teacher.encoder["enc0a_w"] - student.encoder["enc0a_w"]).max()))
        teacher = ema_update(teacher, student, momentum)
    ratios = [b / a for a, b in zip(gaps, gaps[1:])]
    assert all(abs(r - momentum) < 1e-9 for r in ratios)


def test_ema_rejects_arch_mismatch():
    rng = np.random.default_rng(7)
    a = init_model(TINY_ARCH, rng)
    b = init_model(ArchSpec(input_channels=1, class_channels=2, encoder_widths=(2, 3, 4)), rng)
    with pytest.raises(ValueError):
        ema_update(a, b, 0.9)


def test_gradients_of_random_output_functional(tiny_model):
    """Weighted sums of all three heads have FD-verified parameter gradients."""
    from biview import autodiff as ad
    from biview.network import forward_vars, make_param_vars
    from conftest import fd_gradient, rel_err

    rng = np.random.default_rng(11)
    x = _random_input(TINY_ARCH, rng, n=1)
    weights = [rng.normal(size=(1, 1, 8, 8)) for _ in range(3)]

    def scalar():
        pv = make_param_vars(tiny_model)
        out = forward_vars(TINY_ARCH, pv, x)
        total = (
            ad.reduce_sum(out.q_fg * ad.Var(weights[0]))
            + ad.reduce_sum(out.q_bg * ad.Var(weights[1]))
            + ad.reduce_sum(out.q_mix * ad.Var(weights[2]))
        )
        return total, pv

    loss, pv = scalar()
    loss.backward()
    for group in ("encoder", "fg_decoder", "bg_decoder", "mix_head"):
        name = sorted(tiny_model.group(group))[0]
        arr = tiny_model.group(group)[name]
        idx = rng.choice(arr.size, size=min(3, arr.size), replace=False)
        fd = fd_gradient(lambda: float(scalar()[0]), arr, idx)
        for i, fd_value in fd.items():
            assert rel_err(pv[group][name].grad.reshape(-1)[i], fd_value) < 1e-4


def test_checkpoint_roundtrip(tmp_path, tiny_model):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tiny_model, role="teacher", step=17)
    loaded, role, step = load_checkpoint(path)
    assert (role, step) == ("teacher", 17)
    assert loaded.arch == tiny_model.arch
    for group in ("encoder", "fg_decoder", "bg_decoder", "mix_head"):
        for name, arr in tiny_model.group(group).items():
            # float32 quantisation happens on save
            assert np.array_equal(loaded.group(group)[name], arr.astype(np.float32).astype(np.float64))


def test_checkpoint_blob_length_validated(tmp_path, tiny_model):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tiny_model, role="student", step=1)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_checkpoint_header_validated(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"\x01\x00\x00\x00Xjunkjunk")
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)
