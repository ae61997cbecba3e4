import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_batch, random_weights
from oracleprune.network import Conv, Dense, NetworkDef, ReLU, build_graph, init_weights
from oracleprune.tensor_core import (ShapeError, Tensor, backward, conv2d_forward, count_forward_passes,
                                     relu_backward)
from reference import finite_difference_gradients, naive_conv, naive_forward, naive_loss, random_small_net


class TestConv2d:
    def test_scalar(self):
        out = conv2d_forward(np.full((1, 1, 1, 1), 2, np.float32), np.full((1, 1, 1, 1), 3, np.float32),
                             np.zeros(1, np.float32))
        assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 6.0

    def test_zero_weights_give_zero_output(self):
        x = np.random.default_rng(0).random((2, 3, 5, 5)).astype(np.float32)
        out = conv2d_forward(x, np.zeros((4, 3, 3, 3), np.float32), np.zeros(4, np.float32), 1, 1)
        assert out.shape == (2, 4, 5, 5) and not out.any()

    def test_ones(self):
        out = conv2d_forward(np.ones((1, 1, 3, 3), np.float32), np.ones((1, 1, 3, 3), np.float32),
                             np.ones(1, np.float32))
        assert out.reshape(-1).tolist() == [10.0]

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1), (3, 2)])
    def test_matches_loops(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x = rng.normal(size=(2, 3, 7, 6)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        b = rng.normal(size=4).astype(np.float32)
        out = conv2d_forward(x, w, b, stride, pad)
        assert out.shape[2] == (7 + 2 * pad - 3) // stride + 1
        np.testing.assert_allclose(out, naive_conv(x, w, b, stride, pad), rtol=1e-5, atol=1e-5)

    def test_channel_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 2, 4, 4\).*\(3, 3, 3, 3\)"):
            conv2d_forward(np.zeros((1, 2, 4, 4), np.float32), np.zeros((3, 3, 3, 3), np.float32),
                           np.zeros(3, np.float32))


def test_tensor_invariants():
    t = Tensor(np.zeros((2, 3)))
    assert len(t) == 6 and t.shape == (2, 3)
    t.zero_grad()
    assert t.grad.shape == t.shape
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3)), grad=np.zeros(5))


class TestForward:
    def test_uniform_logits_give_log_classes(self):
        net = NetworkDef((1, 4, 4), 10, (Conv(2, 3), ReLU(), Dense(10)))
        w = init_weights(net, 0)
        w["2.weight"][:] = 0
        rec = build_graph(net, w).forward(np.random.default_rng(0).random((5, 1, 4, 4)), [0, 1, 2, 3, 9])
        assert rec.loss == pytest.approx(math.log(10), rel=1e-6)

    def test_saturated_softmax(self):
        net = NetworkDef((1, 1, 1), 3, (Conv(1, 1), ReLU(), Dense(3)))
        w = {"0.weight": np.ones((1, 1, 1, 1), np.float32), "0.bias": np.zeros(1, np.float32),
             "2.weight": np.array([[0.0], [100.0], [0.0]], np.float32), "2.bias": np.zeros(3, np.float32)}
        rec = build_graph(net, w).forward(np.ones((1, 1, 1, 1)), [1])
        assert rec.loss < 1e-30

    def test_label_out_of_range(self, small_net):
        g = build_graph(small_net, init_weights(small_net, 0))
        with pytest.raises(ValueError, match="class range"):
            g.forward(np.zeros((1, 3, 8, 8)), [4])

    def test_matches_naive_forward(self, small_net):
        w = random_weights(small_net, 5)
        b = random_batch(small_net, 3, 6)
        rec = build_graph(small_net, w).forward(b.images, b.labels)
        logits, acts = naive_forward(small_net, w, b.images)
        assert rec.loss == pytest.approx(naive_loss(logits, b.labels), rel=1e-6)
        for layer in (0, 3):
            np.testing.assert_allclose(rec.activations[layer], acts[layer], rtol=1e-5, atol=1e-6)

    def test_post_relu_activations_nonnegative(self, small_net):
        b = random_batch(small_net, 4, 1)
        rec = build_graph(small_net, random_weights(small_net, 1)).forward(b.images, b.labels)
        assert all((a >= 0).all() for a in rec.activations.values())

    def test_forward_is_pure(self, small_net):
        w = random_weights(small_net, 2)
        b = random_batch(small_net, 4, 2)
        g = build_graph(small_net, w)
        l1 = g.forward(b.images, b.labels).loss
        l2 = build_graph(small_net, w).forward(b.images, b.labels).loss
        assert l1 == l2

    def test_counter(self, small_net):
        g = build_graph(small_net, init_weights(small_net, 0))
        with count_forward_passes() as n:
            g.forward(np.zeros((2, 3, 8, 8)), [0, 1])
            g.logits(np.zeros((2, 3, 8, 8)))
        assert n[0] == 2


class TestBackward:
    def test_without_forward_rejected(self, small_net):
        with pytest.raises(RuntimeError):
            build_graph(small_net, init_weights(small_net, 0)).backward()

    def test_leaves_weights_unchanged(self, small_net):
        w = random_weights(small_net, 3)
        before = {k: v.copy() for k, v in w.items()}
        b = random_batch(small_net, 3, 3)
        backward(build_graph(small_net, w).forward(b.images, b.labels))
        assert all(np.array_equal(before[k], w[k]) for k in w)

    def test_disconnected_channel_has_zero_activation_grad(self, small_net):
        w = random_weights(small_net, 4)
        w["3.weight"][:, 2] = 0.0  # channel (0, 2) feeds nothing downstream
        b = random_batch(small_net, 3, 4)
        g = build_graph(small_net, w)
        g.forward(b.images, b.labels)
        grads = g.backward()
        assert not grads.channel_activation_grad(0, 2).any()
        assert grads.channel_activation_grad(0, 1).any()

    def test_relu_dead_region(self):
        x = np.array([-1.0, -0.5, 0.0, 2.0], np.float32)
        assert relu_backward(np.ones(4, np.float32), x).tolist() == [0, 0, 0, 1]

    def test_gradients_against_finite_differences(self):
        checked = 0
        seed = 100
        while checked < 3:
            rng = np.random.default_rng(seed)
            seed += 1
            net = random_small_net(rng, max_params=600)
            w = {k: v.astype(np.float64) for k, v in random_weights(net, seed).items()}
            b = random_batch(net, 2, seed)
            fd = finite_difference_gradients(net, w, b.images.astype(np.float64), b.labels)
            if fd is None:
                continue
            g = build_graph(net, w, dtype=np.float64)
            g.forward(b.images, b.labels)
            grads = g.backward().weight_grads
            for k in w:
                err = np.abs(grads[k] - fd[k]) / (np.abs(fd[k]) + 1e-8)
                assert err.max() < 1e-4, k
            checked += 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_finite_outputs_on_finite_inputs(seed):
    rng = np.random.default_rng(seed)
    net = random_small_net(rng, max_params=2000)
    b = random_batch(net, 2, seed)
    g = build_graph(net, random_weights(net, seed))
    rec = g.forward(b.images, b.labels)
    grads = g.backward()
    assert np.isfinite(rec.loss)
    assert all(np.isfinite(v).all() for v in grads.weight_grads.values())
    assert all(np.isfinite(v).all() for v in grads.activation_grads.values())
