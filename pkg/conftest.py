"""
Shared pytest fixtures
Fixture dùng chung: dữ liệu hạt tổng hợp nhỏ, mạng profile tiny và trọng số cố định
"""

from pathlib import Path

import numpy as np
import pytest

from graindoe.nn.hyperparams import Hyperparams, VERIFIED_CONFIG
from graindoe.nn.model import Weights, build_model
from graindoe.services.synthgrain import generate_dataset, write_dataset


@pytest.fixture
def tiny_hyperparams() -> Hyperparams:
    return VERIFIED_CONFIG.model_copy(update={"batch_size": 16})


@pytest.fixture
def tiny_spec(tiny_hyperparams):
    return build_model(tiny_hyperparams, profile="tiny")


def constant_weights(spec, output_bias: float) -> Weights:
    """Trọng số 0, chỉ bias đầu ra khác 0: mọi tile có cùng xác suất sigmoid(output_bias)"""
    params = {
        index: {name: np.zeros(shape, dtype=np.float32) for name, shape in shapes.items()}
        for index, shapes in spec.param_shapes().items()
    }
    last = max(params)
    params[last]["bias"][...] = output_bias
    return Weights(params)


@pytest.fixture(scope="session")
def synthetic_dataset_dir(tmp_path_factory) -> Path:
    """Tập tile 64 px cân bằng (24 good, 24 bad) kèm manifest.csv"""
    root = tmp_path_factory.mktemp("synthetic")
    dataset = generate_dataset(n_good=24, n_bad=24, tile_size=64, seed=3)
    write_dataset(dataset, root)
    return root


@pytest.fixture
def small_sizes():
    return (24, 12, 12)
