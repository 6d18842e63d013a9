from __future__ import annotations

import numpy as np
import pytest

from biview.data import GeneratorConfig, generate_synthetic
from biview.network import ArchSpec, init_model

TINY_ARCH = ArchSpec(input_channels=1, class_channels=1, encoder_widths=(2, 3, 4))


@pytest.fixture(scope="session")
def single_manifest(tmp_path_factory):
    """Shared single-target dataset: 4 labeled / 36 unlabeled / 10 test, 32x32."""
    root = tmp_path_factory.mktemp("data_single")
    return generate_synthetic(GeneratorConfig(out_dir=root), seed=7)


@pytest.fixture(scope="session")
def multi_manifest(tmp_path_factory):
    """Shared multi-target dataset: 3 foreground classes."""
    root = tmp_path_factory.mktemp("data_multi")
    config = GeneratorConfig(
        out_dir=root, foreground_classes=3, n_labeled=4, n_unlabeled=8, n_test=4
    )
    return generate_synthetic(config, seed=11)


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Small 16x16 dataset for fast trainer tests."""
    root = tmp_path_factory.mktemp("data_tiny")
    config = GeneratorConfig(
        out_dir=root, shape=(1, 16, 16), n_labeled=3, n_unlabeled=5, n_test=2
    )
    return generate_synthetic(config, seed=5)


@pytest.fixture
def tiny_model():
    return init_model(TINY_ARCH, np.random.default_rng(42))


def fd_gradient(fn, array: np.ndarray, indices, h: float = 1e-6) -> dict[int, float]:
    """Central finite differences of scalar fn() w.r.t. chosen flat indices."""
    flat = array.reshape(-1)
    out = {}
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        out[int(i)] = (up - down) / (2.0 * h)
    return out


def rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
