import textwrap

import numpy as np
import pytest

from data.idx import Dataset, write_idx
from models.network import LayeredEnergyModel, NetworkState
from models.topology import build_topology
from training.trainer import TrainConfig


@pytest.fixture
def dense_topology():
    return build_topology((1, 2, 2), ['fc8'], n_classes=4)


@pytest.fixture
def toy_model(dense_topology):
    """4-8-4 network whose units stay inside the active band on inputs in [0, 1]."""
    return LayeredEnergyModel.initialise(dense_topology, kappa=0.5, seed=0, gain=0.5, nonnegative=True)


@pytest.fixture
def mixed_model(dense_topology):
    return LayeredEnergyModel.initialise(dense_topology, kappa=1.0, seed=2)


@pytest.fixture
def kink_model():
    """1-1-1 chain with an inhibitory output weight. The output drive is negative,
    so nudging it towards 1 at small beta has no fixed point: xi_out keeps
    jumping across 0, where sigma' switches between 0 and kappa."""
    topology = build_topology((1,), ['fc1'], n_classes=1)
    return LayeredEnergyModel(topology, [np.array([[0.8]]), np.array([[-0.4]])], kappa=0.5)


@pytest.fixture
def conv_topology():
    return build_topology((2, 8, 8), ['conv3:3:1:1:2:2'], n_classes=2, n_perclass=2)


@pytest.fixture
def conv_model(conv_topology):
    return LayeredEnergyModel.initialise(conv_topology, kappa=1.0, seed=1, gain=0.5)


@pytest.fixture
def toy_batch():
    rng = np.random.default_rng(7)
    x = rng.random((3, 1, 2, 2))
    y = np.eye(4)[[0, 2, 3]]
    return x, y


@pytest.fixture
def random_state():
    """Factory of NetworkStates with potentials spread over and around the active band."""
    def factory(topology, batch, seed, low=-0.5, high=1.5):
        rng = np.random.default_rng(seed)
        return NetworkState([rng.uniform(low, high, size=(batch,) + shape)
                             for shape in topology.layer_shapes()[1:]])
    return factory


@pytest.fixture
def make_cfg():
    def factory(**overrides):
        values = {
            'lam': 0.5,
            't_free': 60,
            't_nudge': 20,
            'beta': 0.1,
            'kappa': 0.5,
            'learning_rate': 0.01,
            'batch_size': 2,
            'seed': 3,
        }
        values.update(overrides)
        return TrainConfig(**values)
    return factory


@pytest.fixture
def idx_files(tmp_path):
    """Write a Dataset as an IDX pair under tmp_path; returns (images_path, labels_path)."""
    def writer(dataset, prefix='train'):
        images = tmp_path / f"{prefix}-images-idx3-ubyte"
        labels = tmp_path / f"{prefix}-labels-idx1-ubyte"
        write_idx(dataset, images, labels)
        return images, labels
    return writer


@pytest.fixture
def pixel_dataset():
    rng = np.random.default_rng(11)
    pixels = rng.integers(0, 256, size=(6, 1, 5, 4))
    return Dataset(pixels / 255.0, rng.integers(0, 10, size=6), n_classes=10)


TOY_CONFIG = """
[model]
input_shape = 1, 2, 2
hidden = fc8
n_classes = 4
kappa = 0.5
init_gain = 0.5
init_nonnegative = true

[train]
lambda = 0.5
t_free = 500
t_nudge = 500
beta = 0.01
bias_mode = three_phase
learning_rate = 0.01
batch_size = 2
epochs = 1
dynamics = meanfield

[data]
dataset = random
n_train = 8
n_test = 4

[run]
seed = 0
out_dir = {out_dir}

[gradcheck]
threshold = 0.95
beta = 0.01
n_samples = 2
"""


@pytest.fixture
def write_config(tmp_path):
    """Write INI text (with `{out_dir}` filled in) and return its path."""
    def writer(text=TOY_CONFIG, name='run.ini'):
        path = tmp_path / name
        path.write_text(textwrap.dedent(text).format(out_dir=(tmp_path / 'out').as_posix()))
        return path
    return writer
