"""Command-line entry point for the whole pipeline.

One JSON config document with per-module sections drives every verb;
individual keys can be overridden on the command line with dotted
paths (`--set trainer.train_steps=500`).  Every run echoes its
configuration into the output directory before writing anything else.

Exit codes: 0 success, 2 invalid configuration, 3 missing inputs.
Failures print a JSON object {"error", "detail"} to stdout.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

from .data import GeneratorConfig, generate_synthetic, load_manifest
from .errors import ConfigurationError, CorruptCheckpointError, CorruptSampleError
from .network import load_checkpoint
from .theory import write_theory_report
from .trainer import (
    RunConfig,
    evaluate,
    pretrain_teacher,
    run_ablation,
    train_student,
)

__all__ = ["main", "default_config", "VERBS"]

VERBS = ("generate-data", "pretrain", "train", "evaluate", "ablate", "verify-theory", "plot")


def default_config() -> dict:
    """The full configuration document with every default spelled out."""
    return {
        "data": {
            "shape": [1, 32, 32],
            "foreground_classes": 1,
            "n_labeled": 4,
            "n_unlabeled": 36,
            "n_test": 10,
            "noise_sigma": 0.05,
            "edge_blur": 0.7,
            "max_distractors": 0,
            "background_gradient": 0.0,
            "object_scale": None,
            "seed": 0,
        },
        "trainer": {
            "labeled_batch": 4,
            "unlabeled_batch": 4,
            "pretrain_steps": 300,
            "train_steps": 1500,
            "learning_rate": 0.01,
            "sgd_momentum": 0.9,
            "weight_decay": 1e-4,
            "alpha": 0.5,
            "beta": 2.0 / 3.0,
            "ema_momentum": 0.99,
            "seed": 0,
            "encoder_widths": [8, 16, 32],
            "use_bg_branch": True,
            "use_mix_layer": True,
            "use_bcl": True,
        },
        "paths": {
            "data_dir": None,
            "teacher_checkpoint": None,
            "model_checkpoint": None,
        },
        "evaluate": {"split": "test"},
        "ablate": {"seeds": 3},
        "theory": {
            "n_satisfying": 100_000,
            "n_violating": 10_000,
            "lr_max": 0.01,
            "seed": 0,
        },
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_dotted(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigurationError(f"--set expects key.path=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.split(".")
    node = config
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    try:
        node[keys[-1]] = json.loads(raw)
    except json.JSONDecodeError:
        node[keys[-1]] = raw


def _load_config(args) -> dict:
    config = default_config()
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} does not exist")
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigurationError("config document must be a JSON object")
        config = _deep_merge(config, user)
    for assignment in args.set or []:
        _apply_dotted(config, assignment)
    return config


def _echo(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _data_dir(config: dict, args) -> Path:
    candidate = getattr(args, "data", None) or config["paths"]["data_dir"]
    if candidate is None:
        raise ConfigurationError("no dataset directory: pass --data or set paths.data_dir")
    path = Path(candidate)
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no manifest.json under {path}")
    return path


def _run_config(config: dict, data_dir: Path, out_dir: Path, seed_override) -> RunConfig:
    section = dict(config["trainer"])
    if seed_override is not None:
        section["seed"] = int(seed_override)
    section["encoder_widths"] = tuple(section["encoder_widths"])
    return RunConfig(data_dir=data_dir, out_dir=out_dir, **section)


# -- verbs ------------------------------------------------------------------------


def _cmd_generate_data(args, config: dict) -> int:
    out_dir = Path(args.out)
    section = dict(config["data"])
    seed = int(args.seed if args.seed is not None else section.pop("seed", 0))
    section.pop("seed", None)
    gen = GeneratorConfig(
        out_dir=out_dir,
        shape=tuple(section["shape"]),
        foreground_classes=section["foreground_classes"],
        n_labeled=section["n_labeled"],
        n_unlabeled=section["n_unlabeled"],
        n_test=section["n_test"],
        noise_sigma=section["noise_sigma"],
        edge_blur=section["edge_blur"],
        max_distractors=section.get("max_distractors", 0),
        background_gradient=section.get("background_gradient", 0.0),
        object_scale=section.get("object_scale"),
    )
    _echo(out_dir, {"verb": "generate-data", "data": config["data"], "seed": seed})
    manifest = generate_synthetic(gen, seed)
    print(json.dumps({"dataset": str(out_dir), "ids": len(manifest.all_ids())}))
    return 0


def _cmd_pretrain(args, config: dict) -> int:
    data_dir = _data_dir(config, args)
    run = _run_config(config, data_dir, Path(args.out), args.seed)
    pretrain_teacher(run)
    print(json.dumps({"teacher_checkpoint": str(run.out_dir / "teacher.ckpt")}))
    return 0


def _cmd_train(args, config: dict) -> int:
    data_dir = _data_dir(config, args)
    teacher_path = args.teacher or config["paths"]["teacher_checkpoint"]
    if teacher_path is None:
        raise ConfigurationError("no teacher checkpoint: pass --teacher or set paths.teacher_checkpoint")
    teacher_path = Path(teacher_path)
    if not teacher_path.exists():
        raise FileNotFoundError(f"teacher checkpoint {teacher_path} does not exist")
    teacher, _, _ = load_checkpoint(teacher_path)
    run = _run_config(config, data_dir, Path(args.out), args.seed)
    train_student(run, teacher)
    manifest = load_manifest(data_dir)
    student, _, _ = load_checkpoint(run.out_dir / "student.ckpt")
    report = evaluate(student, manifest)
    report.write_csv(run.out_dir / "metrics.csv")
    report.write_summary(run.out_dir / "metrics_summary.json")
    print(json.dumps({"student_checkpoint": str(run.out_dir / "student.ckpt"), "means": report.means()}))
    return 0


def _cmd_evaluate(args, config: dict) -> int:
    data_dir = _data_dir(config, args)
    ckpt = args.ckpt or config["paths"]["model_checkpoint"]
    if ckpt is None:
        raise ConfigurationError("no model checkpoint: pass --ckpt or set paths.model_checkpoint")
    ckpt = Path(ckpt)
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint {ckpt} does not exist")
    out_dir = Path(args.out)
    split = args.split or config["evaluate"]["split"]
    manifest = load_manifest(data_dir)
    ids = {
        "test": manifest.test_ids,
        "labeled": manifest.labeled_ids,
        "unlabeled": manifest.unlabeled_ids,
    }.get(split)
    if ids is None:
        raise ConfigurationError(f"unknown split {split!r}; use test, labeled or unlabeled")
    _echo(out_dir, {"verb": "evaluate", "checkpoint": str(ckpt), "split": split})
    model, _, _ = load_checkpoint(ckpt)
    report = evaluate(model, manifest, ids)
    report.write_csv(out_dir / "metrics.csv")
    report.write_summary(out_dir / "metrics_summary.json")
    print(json.dumps({"split": split, "means": report.means(), "excluded": report.excluded_count}))
    return 0


def _cmd_ablate(args, config: dict) -> int:
    data_dir = _data_dir(config, args)
    out_dir = Path(args.out)
    seeds = int(args.seeds if args.seeds is not None else config["ablate"]["seeds"])
    if seeds < 1:
        raise ConfigurationError("--seeds must be >= 1")
    run = _run_config(config, data_dir, out_dir, args.seed)
    run.write_echo()
    rows = run_ablation(run, seeds)
    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "metric", "value"])
        writer.writerows(rows)
    means = {}
    for variant, _, metric, value in rows:
        means.setdefault(variant, {}).setdefault(metric, []).append(value)
    summary = {
        variant: {metric: sum(vals) / len(vals) for metric, vals in metrics.items()}
        for variant, metrics in means.items()
    }
    (out_dir / "ablation_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary))
    return 0


def _cmd_verify_theory(args, config: dict) -> int:
    out_dir = Path(args.out)
    section = dict(config["theory"])
    if args.seed is not None:
        section["seed"] = int(args.seed)
    _echo(out_dir, {"verb": "verify-theory", "theory": section})
    summary = write_theory_report(
        out_dir,
        n_satisfying=int(section["n_satisfying"]),
        n_violating=int(section["n_violating"]),
        lr_max=float(section["lr_max"]),
        seed=int(section["seed"]),
    )
    print(json.dumps(summary))
    return 0


def _cmd_plot(args, config: dict) -> int:
    from . import plotting

    run_dir = Path(args.run)
    if not run_dir.exists():
        raise FileNotFoundError(f"run directory {run_dir} does not exist")
    out_dir = Path(args.out) if args.out else run_dir / "plots"
    _echo(out_dir, {"verb": "plot", "run": str(run_dir)})
    made = []
    for name, renderer in (
        ("losses.csv", plotting.plot_loss_curves),
        ("pretrain_losses.csv", plotting.plot_loss_curves),
        ("metrics.csv", plotting.plot_metric_rows),
        ("ablation.csv", plotting.plot_ablation),
    ):
        src = run_dir / name
        if src.exists():
            made.append(str(renderer(src, out_dir / (src.stem + ".png"))))
    if not made:
        raise FileNotFoundError(f"nothing to plot under {run_dir}")
    print(json.dumps({"plots": made}))
    return 0


# -- argument parsing -----------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biview",
        description="Semi-supervised segmentation lab with explicit background modeling.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = True):
        p.add_argument("--config", help="JSON configuration document")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="seed override for this verb")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("generate-data", help="write a synthetic dataset")
    common(p)

    p = sub.add_parser("pretrain", help="pre-train the teacher on labeled data")
    common(p)
    p.add_argument("--data", help="dataset directory (overrides paths.data_dir)")

    p = sub.add_parser("train", help="self-train the student from a teacher checkpoint")
    common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--teacher", help="teacher checkpoint path")

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--ckpt", help="model checkpoint path")
    p.add_argument("--split", help="test, labeled or unlabeled")

    p = sub.add_parser("ablate", help="run ablation variants over several seeds")
    common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--seeds", type=int, help="number of seeds per variant")

    p = sub.add_parser("verify-theory", help="run the entropy-bound verifier")
    common(p)

    p = sub.add_parser("plot", help="render run CSVs into static images")
    common(p, out_required=False)
    p.add_argument("--run", required=True, help="run directory holding the CSVs")
    p.add_argument("--out", help="plot output directory (default: RUN/plots)")

    return parser


_HANDLERS = {
    "generate-data": _cmd_generate_data,
    "pretrain": _cmd_pretrain,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "verify-theory": _cmd_verify_theory,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        return _HANDLERS[args.verb](args, config)
    except (ConfigurationError,) as exc:
        print(json.dumps({"error": "invalid configuration", "detail": str(exc)}))
        return 2
    except FileNotFoundError as exc:
        print(json.dumps({"error": "missing input", "detail": str(exc)}))
        return 3
    except (CorruptSampleError, CorruptCheckpointError) as exc:
        print(json.dumps({"error": "corrupt input", "detail": str(exc)}))
        return 3
    except ValueError as exc:
        print(json.dumps({"error": "invalid configuration", "detail": str(exc)}))
        return 2


if __name__ == "__main__":
    sys.exit(main())
