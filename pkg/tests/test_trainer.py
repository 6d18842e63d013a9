from __future__ import annotations

import csv
import json
import shutil

import numpy as np
import pytest

from biview.data import load_manifest
from biview.errors import ConfigurationError
from biview.losses import LossBreakdown, lambda_schedule
from biview.network import PARAM_GROUPS
from biview.trainer import (
    RunConfig,
    evaluate,
    make_pseudo_labels,
    pretrain_teacher,
    run_supervised,
    train_student,
)


def _config(manifest, out_dir, **overrides) -> RunConfig:
    defaults = dict(
        data_dir=manifest.root,
        out_dir=out_dir,
        labeled_batch=2,
        unlabeled_batch=2,
        pretrain_steps=8,
        train_steps=8,
        encoder_widths=(4, 6, 8),
        seed=3,
    )
    defaults.update(overrides)
    return RunConfig(**defaults)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_config_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        RunConfig(data_dir=tmp_path, out_dir=tmp_path, labeled_batch=1)
    with pytest.raises(ConfigurationError):
        RunConfig(data_dir=tmp_path, out_dir=tmp_path, pretrain_steps=0)
    with pytest.raises(ConfigurationError):
        RunConfig(data_dir=tmp_path, out_dir=tmp_path, beta=1.0)
    with pytest.raises(ConfigurationError):
        RunConfig(data_dir=tmp_path, out_dir=tmp_path, use_bg_branch=False, use_mix_layer=True)
    with pytest.raises(ConfigurationError):
        RunConfig(data_dir=tmp_path, out_dir=tmp_path, use_bcl=True, use_mix_layer=False,
                  use_bg_branch=True)


def test_run_config_json_roundtrip(tmp_path):
    config = RunConfig(data_dir=tmp_path / "d", out_dir=tmp_path / "o", seed=9)
    clone = RunConfig.from_json(config.to_json())
    assert clone == config


def test_pretrain_reduces_loss_and_writes_outputs(tiny_manifest, tmp_path):
    config = _config(tiny_manifest, tmp_path / "run", pretrain_steps=60)
    pretrain_teacher(config)
    assert (tmp_path / "run" / "config.json").exists()
    assert (tmp_path / "run" / "teacher.ckpt").exists()
    rows = _read_csv(tmp_path / "run" / "pretrain_losses.csv")
    assert len(rows) == 60
    first = np.mean([float(r["l_total"]) for r in rows[:5]])
    last = np.mean([float(r["l_total"]) for r in rows[-5:]])
    assert last < first


def test_pretrain_deterministic(tiny_manifest, tmp_path):
    a = _config(tiny_manifest, tmp_path / "a", pretrain_steps=10)
    b = _config(tiny_manifest, tmp_path / "b", pretrain_steps=10)
    pretrain_teacher(a)
    pretrain_teacher(b)
    assert (tmp_path / "a" / "teacher.ckpt").read_bytes() == (tmp_path / "b" / "teacher.ckpt").read_bytes()


def test_pretrain_requires_two_labeled(tiny_manifest, tmp_path):
    data_dir = tmp_path / "one_labeled"
    shutil.copytree(tiny_manifest.root, data_dir)
    manifest_obj = json.loads((data_dir / "manifest.json").read_text())
    manifest_obj["labeled_ids"] = manifest_obj["labeled_ids"][:1]
    (data_dir / "manifest.json").write_text(json.dumps(manifest_obj))
    config = _config(load_manifest(data_dir), tmp_path / "run")
    with pytest.raises(ConfigurationError):
        pretrain_teacher(config)


def test_pretrain_ablation_flags_zero_bg_and_mix(tiny_manifest, tmp_path):
    config = _config(
        tiny_manifest, tmp_path / "run",
        use_bg_branch=False, use_mix_layer=False, use_bcl=False,
    )
    pretrain_teacher(config)
    rows = _read_csv(tmp_path / "run" / "pretrain_losses.csv")
    assert all(float(r["l_bg"]) == 0.0 and float(r["l_m"]) == 0.0 for r in rows)
    assert all(float(r["l_total"]) == float(r["l_fg"]) for r in rows)


def _saturated_teacher(manifest, fg_bias, bg_bias, widths=(4, 6, 8)):
    from biview.network import init_model
    from biview.trainer import _arch_for

    config = RunConfig(data_dir=manifest.root, out_dir=manifest.root, encoder_widths=widths)
    model = init_model(_arch_for(manifest, config), np.random.default_rng(0))
    for decoder, bias in ((model.fg_decoder, fg_bias), (model.bg_decoder, bg_bias)):
        decoder["out_w"] = np.zeros_like(decoder["out_w"])
        decoder["out_b"] = np.full_like(decoder["out_b"], bias)
    return model


def test_pseudo_labels_threshold_semantics(tiny_manifest):
    x = np.zeros((2, 1, 16, 16))
    teacher = _saturated_teacher(tiny_manifest, fg_bias=4.0, bg_bias=-4.0)
    pair = make_pseudo_labels(teacher, x, source_step=7)
    assert np.all(pair.p_fg == 1.0) and np.all(pair.p_bg == 0.0)
    assert pair.source_step == 7


def test_pseudo_labels_tie_goes_to_foreground(tiny_manifest):
    x = np.zeros((1, 1, 16, 16))
    teacher = _saturated_teacher(tiny_manifest, fg_bias=0.0, bg_bias=0.0)
    pair = make_pseudo_labels(teacher, x)
    assert np.all(pair.p_fg == 1.0)  # sigmoid(0) == 0.5 exactly, >= threshold


def test_pseudo_labels_need_not_be_complementary(tiny_manifest):
    x = np.zeros((1, 1, 16, 16))
    teacher = _saturated_teacher(tiny_manifest, fg_bias=4.0, bg_bias=4.0)
    pair = make_pseudo_labels(teacher, x)
    assert np.all(pair.p_fg + pair.p_bg == 2.0)  # both claim every cell


def test_train_student_logs_schedule_and_identities(tiny_manifest, tmp_path):
    config = _config(tiny_manifest, tmp_path / "run", train_steps=12)
    teacher = pretrain_teacher(config)
    train_student(config, teacher)
    rows = _read_csv(tmp_path / "run" / "losses.csv")
    assert len(rows) == 12
    assert list(rows[0]) == list(LossBreakdown.field_names())
    for t, row in enumerate(rows, start=1):
        assert float(row["lambda_t"]) == lambda_schedule(t, 12)
        breakdown = LossBreakdown(**{k: float(v) for k, v in row.items()})
        breakdown.check_identities(atol=0.0)  # identities hold exactly
    assert (tmp_path / "run" / "student.ckpt").exists()
    assert (tmp_path / "run" / "teacher.ckpt").exists()


def test_train_student_fg_only_variant_reduces_total(tiny_manifest, tmp_path):
    config = _config(
        tiny_manifest, tmp_path / "run",
        use_bg_branch=False, use_mix_layer=False, use_bcl=False, train_steps=6,
    )
    teacher = pretrain_teacher(config)
    train_student(config, teacher)
    for row in _read_csv(tmp_path / "run" / "losses.csv"):
        assert float(row["l_bg_l"]) == 0.0 and float(row["l_bg_u"]) == 0.0
        assert float(row["l_bcl"]) == 0.0
        expected = float(row["l_fg_l"]) + float(row["alpha"]) * float(row["l_fg_u"])
        assert float(row["l_total"]) == expected


def test_train_student_requires_unlabeled(tiny_manifest, tmp_path):
    data_dir = tmp_path / "no_unlabeled"
    shutil.copytree(tiny_manifest.root, data_dir)
    manifest_obj = json.loads((data_dir / "manifest.json").read_text())
    manifest_obj["unlabeled_ids"] = []
    (data_dir / "manifest.json").write_text(json.dumps(manifest_obj))
    config = _config(load_manifest(data_dir), tmp_path / "run")
    teacher = pretrain_teacher(_config(tiny_manifest, tmp_path / "pre"))
    with pytest.raises(ConfigurationError):
        train_student(config, teacher)


def test_teacher_follows_ema_recurrence(tiny_manifest, tmp_path):
    config = _config(tiny_manifest, tmp_path / "run", train_steps=10)
    initial_teacher = pretrain_teacher(config)
    students, teachers = [], []
    train_student(
        config, initial_teacher,
        step_callback=lambda t, s, te: (students.append(s.copy()), teachers.append(te.copy())),
    )
    m = config.ema_momentum
    replay = initial_teacher.copy()
    for student, logged_teacher in zip(students, teachers):
        for group in PARAM_GROUPS:
            for name in replay.group(group):
                replay.group(group)[name] = (
                    m * replay.group(group)[name] + (1.0 - m) * student.group(group)[name]
                )
                assert np.array_equal(replay.group(group)[name], logged_teacher.group(group)[name])


def test_evaluate_invariant_to_bg_poisoning(tiny_manifest, tmp_path):
    config = _config(tiny_manifest, tmp_path / "run", pretrain_steps=20)
    model = pretrain_teacher(config)
    reference = evaluate(model, tiny_manifest)
    rng = np.random.default_rng(0)
    for group in (model.bg_decoder, model.mix_head):
        for name in group:
            group[name] = rng.normal(size=group[name].shape)
    poisoned = evaluate(model, tiny_manifest)
    for a, b in zip(reference.rows, poisoned.rows):
        assert a.csv_values() == b.csv_values()  # nan-safe exact comparison


def test_evaluate_memorization_ceiling(tiny_manifest, tmp_path):
    config = _config(tiny_manifest, tmp_path / "run", pretrain_steps=250, learning_rate=0.02)
    model = pretrain_teacher(config)
    report = evaluate(model, tiny_manifest, tiny_manifest.labeled_ids)
    assert report.means()["dsc"] > 0.85


def test_evaluate_rejects_empty_split(tiny_manifest, tiny_model):
    with pytest.raises(ValueError):
        evaluate(tiny_model, tiny_manifest, [])


def test_evaluate_multi_target_rows(multi_manifest, tmp_path):
    config = _config(multi_manifest, tmp_path / "run", pretrain_steps=4)
    model = pretrain_teacher(config)
    report = evaluate(model, multi_manifest)
    classes = {row.class_index for row in report.rows}
    assert classes == {1, 2, 3}
    assert len(report.rows) == 3 * len(multi_manifest.test_ids)


def test_run_supervised_outputs(tiny_manifest, tmp_path):
    config = _config(tiny_manifest, tmp_path / "run", pretrain_steps=5, train_steps=5)
    report = run_supervised(config)
    assert (tmp_path / "run" / "metrics.csv").exists()
    assert (tmp_path / "run" / "losses.csv").exists()
    rows = _read_csv(tmp_path / "run" / "losses.csv")
    assert len(rows) == 10  # pretrain + train budget
    assert len(report.rows) == len(tiny_manifest.test_ids)
