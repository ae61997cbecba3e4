import numpy as np
import pytest

from oracleprune.data import Batch, sample_validation, synth_dataset
from oracleprune.network import Conv, Dense, MaxPool, NetworkDef, ReLU, convnet2, init_weights
from oracleprune.training import TrainConfig, train


def random_weights(net, seed, bias_scale=0.1):
    rng = np.random.default_rng(seed)
    w = init_weights(net, seed)
    for k in w:
        if k.endswith(".bias"):
            w[k] = rng.normal(0, bias_scale, w[k].shape).astype(np.float32)
    return w


def random_batch(net, n, seed):
    rng = np.random.default_rng(seed)
    return Batch(rng.random((n,) + net.input_shape).astype(np.float32),
                 rng.integers(0, net.num_classes, n))


@pytest.fixture
def toy_net():
    """conv(1->2, 3x3) -> relu -> conv(2->4, 3x3) -> relu -> pool -> dense(3)."""
    return NetworkDef((1, 8, 8), 3, (Conv(2, 3), ReLU(), Conv(4, 3), ReLU(), MaxPool(2), Dense(3)))


@pytest.fixture
def small_net():
    return NetworkDef((3, 8, 8), 4, (Conv(4, 3, pad=1), ReLU(), MaxPool(2), Conv(6, 3, pad=1), ReLU(),
                                     MaxPool(2), Dense(4)))


@pytest.fixture(scope="session")
def synth_splits():
    return synth_dataset(4, 1200, 12, seed=3)


@pytest.fixture(scope="session")
def trained_small(synth_splits):
    """A quickly trained 4+6 channel net on a small synthetic set."""
    net = convnet2(synth_splits.image_shape, 4, widths=(4, 6))
    weights, history = train(net, synth_splits, TrainConfig(epochs=6, lr_decay_epochs=3, seed=1))
    return net, weights, history


@pytest.fixture(scope="session")
def small_sample(synth_splits):
    return sample_validation(synth_splits, 64, 16, seed=0)


def pytest_terminal_summary(terminalreporter):
    import re
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    def order(line):
        num, tail = re.match(r"\w+ criterion (\d+)(\w*)", line).groups()
        return int(num), tail
    for line in sorted(mod.RESULTS, key=order):
        terminalreporter.write_line(line)
