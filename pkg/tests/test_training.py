import numpy as np
import pytest

from oracleprune.data import Batch, Split, synth_dataset
from oracleprune.network import Conv, Dense, NetworkDef, ReLU, build_graph, convnet2, init_weights
from oracleprune.training import (DivergenceError, TrainConfig, evaluate_top1, predict, sgd_step, train)


def test_zero_lr_leaves_weights(synth_splits):
    net = convnet2(synth_splits.image_shape, 4, widths=(2, 2))
    w0 = init_weights(net, 0)
    w, _ = train(net, synth_splits, TrainConfig(lr=0.0, epochs=1, seed=0, weight_decay=0.0))
    assert all(np.array_equal(w0[k], w[k]) for k in w0)


def test_single_sgd_step_scalar():
    w = {"theta": np.array([2.0], np.float32)}
    sgd_step(w, {"theta": np.array([0.5], np.float32)}, {}, lr=0.1, momentum=0.9)
    assert w["theta"][0] == pytest.approx(2.0 - 0.1 * 0.5)


def test_momentum_second_step():
    w, v = {"theta": np.array([2.0], np.float32)}, {}
    sgd_step(w, {"theta": np.array([0.5], np.float32)}, v, lr=0.1, momentum=0.9)
    sgd_step(w, {"theta": np.array([0.5], np.float32)}, v, lr=0.1, momentum=0.9)
    # v2 = 0.9 * 0.5 + 0.5
    assert w["theta"][0] == pytest.approx(1.95 - 0.1 * 0.95)


def test_first_training_step_is_plain_gradient_step():
    net = NetworkDef((1, 2, 2), 2, (Conv(1, 1), ReLU(), Dense(2)))
    images = np.random.default_rng(0).random((4, 1, 2, 2)).astype(np.float32)
    labels = np.array([0, 1, 0, 1])
    splits_like = type("S", (), {})()
    splits_like.train = Split(images, labels, np.arange(4))
    splits_like.test = Split(images, labels, np.arange(4))
    splits_like.image_shape = (1, 2, 2)
    cfg = TrainConfig(lr=0.1, epochs=1, batch_size=4, seed=3, weight_decay=0.0)
    w0 = init_weights(net, 3)
    g = build_graph(net, w0)
    g.forward(images, labels)  # batch of 4 = whole set, so the permutation does not matter
    grads = g.backward().weight_grads
    w1, _ = train(net, splits_like, cfg)
    for k in w0:
        np.testing.assert_allclose(w1[k], w0[k] - 0.1 * grads[k], rtol=1e-6, atol=1e-7)


def test_training_is_bit_reproducible(synth_splits):
    net = convnet2(synth_splits.image_shape, 4, widths=(3, 3))
    cfg = TrainConfig(epochs=2, seed=5)
    a, ha = train(net, synth_splits, cfg)
    b, hb = train(net, synth_splits, cfg)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert ha.train_loss == hb.train_loss and len(ha.log_lines()) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_detected(synth_splits):
    net = convnet2(synth_splits.image_shape, 4, widths=(3, 3))
    with pytest.raises(DivergenceError):
        train(net, synth_splits, TrainConfig(lr=1e6, epochs=3, seed=0))


def test_default_generator_reaches_90_percent():
    s = synth_dataset(seed=0)
    net = convnet2(s.image_shape, s.num_classes)
    _, h = train(net, s, TrainConfig(epochs=12, lr_decay_epochs=5, seed=0))
    assert h.test_acc[-1] > 0.9


class TestEvaluate:
    def test_constant_logits_pick_class_zero(self):
        net = NetworkDef((1, 2, 2), 4, (Conv(1, 1), ReLU(), Dense(4)))
        w = init_weights(net, 0)
        w["2.weight"][:] = 0
        batch = Batch(np.random.default_rng(0).random((8, 1, 2, 2)).astype(np.float32), np.arange(8) % 4)
        assert evaluate_top1(net, w, batch) == 0.25

    def test_memorizer(self):
        net = NetworkDef((4, 1, 1), 4, (Conv(4, 1), ReLU(), Dense(4)))
        w = {"0.weight": np.eye(4, dtype=np.float32).reshape(4, 4, 1, 1), "0.bias": np.zeros(4, np.float32),
             "2.weight": np.eye(4, dtype=np.float32), "2.bias": np.zeros(4, np.float32)}
        labels = np.array([3, 1, 0, 2, 2, 1])
        batch = Batch(np.eye(4, dtype=np.float32)[labels].reshape(6, 4, 1, 1), labels)
        assert evaluate_top1(net, w, batch) == 1.0

    def test_recount_and_partition_invariance(self, trained_small, synth_splits):
        net, w, _ = trained_small
        test = synth_splits.test
        acc = evaluate_top1(net, w, test)
        graph = build_graph(net, w)
        correct = sum(int(np.argmax(graph.logits(test.images[i:i + 1])[0]) == test.labels[i])
                      for i in range(len(test)))
        assert acc == correct / len(test)
        for bs in (1, 7, 64, 10_000):
            assert evaluate_top1(net, w, test, batch_size=bs) == acc

    def test_empty_rejected(self, toy_net):
        empty = Split(np.zeros((0, 1, 8, 8), np.float32), np.zeros(0, np.int64), np.zeros(0, np.int64))
        with pytest.raises(ValueError):
            evaluate_top1(toy_net, init_weights(toy_net, 0), empty)

    def test_predict_ties_lowest_class(self):
        net = NetworkDef((1, 1, 1), 3, (Conv(1, 1), ReLU(), Dense(3)))
        w = init_weights(net, 0)
        w["2.weight"][:] = 0
        w["2.bias"][:] = [1.0, 2.0, 2.0]
        assert predict(net, w, np.zeros((2, 1, 1, 1), np.float32)).tolist() == [1, 1]
