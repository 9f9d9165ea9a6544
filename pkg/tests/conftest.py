import numpy as np
import pytest
import torch

from travmap.dataset import MapDataset
from travmap.grid import GridSpec
from travmap.synth import LidarModel, generate_sequence
from travmap.train import ModelConfig

torch.manual_seed(0)


@pytest.fixture(scope="session")
def tiny_grid():
    return GridSpec.square(3.2, 0.2)  # 32x32


@pytest.fixture(scope="session")
def tiny_sequence_dir(tmp_path_factory, tiny_grid):
    out = tmp_path_factory.mktemp("tinyseq")
    lidar = LidarModel(max_range=8.0, range_sigma=0.0, dropout=0.0)
    generate_sequence(100, 5, out, lidar=lidar, g=tiny_grid, speed=0.4)
    return out


@pytest.fixture()
def tiny_dataset(tiny_sequence_dir):
    return MapDataset(tiny_sequence_dir, max_pillars=256, max_points=8)


@pytest.fixture()
def tiny_model_config(tiny_grid):
    return ModelConfig(tiny_grid, channels=32, max_pillars=256, max_points=8)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(1234)
    np.random.seed(1234)
    yield
