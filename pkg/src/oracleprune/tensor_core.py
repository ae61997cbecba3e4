"""Dense tensor engine: forward operators and exact reverse-mode gradients.

The engine is deliberately small. A :class:`Graph` is a fixed, sequential list
of :class:`OpNode` objects evaluated in order; ``backward`` walks the same list
in reverse. Storage is float32 by default, every reduction (matmul, sums)
accumulates in float64 and is cast back afterwards.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

OP_KINDS = ("conv2d", "dense", "relu", "maxpool", "flatten", "softmax_xent")


class ShapeError(ValueError):
    pass


@dataclass
class Tensor:
    """Row-major float buffer with an optional gradient of the same shape."""

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        if self.data.ndim == 0 or any(s <= 0 for s in self.data.shape):
            raise ShapeError(f"tensor extents must be positive, got {self.data.shape}")
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise ShapeError(f"grad shape {self.grad.shape} != data shape {self.data.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __len__(self):
        return self.data.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


# ---------------------------------------------------------------------------
# forward-pass instrumentation


class _PassCounter(threading.local):
    def __init__(self):
        self.count = 0


_counter = _PassCounter()


def forward_pass_count() -> int:
    """Number of batch forward passes executed on this thread so far."""
    return _counter.count


@contextmanager
def count_forward_passes() -> Iterator[list[int]]:
    """Count forward passes inside the block; the count lands in ``box[0]``."""
    box = [0]
    start = _counter.count
    try:
        yield box
    finally:
        box[0] = _counter.count - start


# ---------------------------------------------------------------------------
# primitive operators (pure functions on ndarrays)


def _acc(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float64, copy=False)


def conv_output_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    # (N, C, H, W) -> (N, H', W', C*kh*kw)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * kh * kw)


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                   stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlation of ``x`` [N,C,H,W] with ``weights`` [F,C,kh,kw] plus bias."""
    if x.ndim != 4 or weights.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weights, got input {x.shape}, weights {weights.shape}")
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} has {x.shape[1]} channels, "
            f"weights {weights.shape} expect {weights.shape[1]}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"conv2d bias {bias.shape} does not match weights {weights.shape}")
    if stride < 1 or pad < 0:
        raise ValueError(f"invalid stride={stride} / pad={pad}")
    f, _, kh, kw = weights.shape
    if x.shape[2] + 2 * pad < kh or x.shape[3] + 2 * pad < kw:
        raise ShapeError(f"conv2d kernel {weights.shape} larger than padded input {x.shape}")
    cols = _im2col(x, kh, kw, stride, pad)
    out = _acc(cols) @ _acc(weights.reshape(f, -1)).T + _acc(bias)
    return out.transpose(0, 3, 1, 2).astype(x.dtype)


def conv2d_backward(dy: np.ndarray, x: np.ndarray, weights: np.ndarray,
                    stride: int, pad: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a conv2d with respect to input, weights and bias."""
    f, c, kh, kw = weights.shape
    n, _, ho, wo = dy.shape
    dy64 = _acc(dy).transpose(0, 2, 3, 1).reshape(-1, f)
    cols = _acc(_im2col(x, kh, kw, stride, pad)).reshape(-1, c * kh * kw)
    dw = (dy64.T @ cols).reshape(weights.shape)
    db = dy64.sum(axis=0)
    dcols = (dy64 @ _acc(weights.reshape(f, -1))).reshape(n, ho, wo, c, kh, kw)
    hp, wp = x.shape[2] + 2 * pad, x.shape[3] + 2 * pad
    dxp = np.zeros((n, c, hp, wp), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + x.shape[2], pad:pad + x.shape[3]]
    dt = x.dtype
    return dx.astype(dt), dw.astype(dt), db.astype(dt)


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ShapeError(f"dense shape mismatch: input {x.shape}, weights {weights.shape}")
    return (_acc(x) @ _acc(weights).T + _acc(bias)).astype(x.dtype)


def dense_backward(dy, x, weights):
    dy64 = _acc(dy)
    dt = x.dtype
    return ((dy64 @ _acc(weights)).astype(dt),
            (dy64.T @ _acc(x)).astype(dt),
            dy64.sum(axis=0).astype(dt))


def relu_forward(x):
    return np.maximum(x, 0).astype(x.dtype)


def relu_backward(dy, x):
    # dead region (x <= 0) passes no gradient
    return np.where(x > 0, dy, 0).astype(dy.dtype)


def maxpool_forward(x: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped.

    Returns the pooled output and the flat in-window argmax (first max wins).
    """
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise ShapeError(f"maxpool size {size} larger than input {x.shape}")
    win = x[:, :, :ho * size, :wo * size].reshape(n, c, ho, size, wo, size)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(dy, arg, in_shape, size):
    n, c, h, w = in_shape
    ho, wo = dy.shape[2], dy.shape[3]
    dwin = np.zeros((n, c, ho, wo, size * size), dtype=dy.dtype)
    np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
    dwin = dwin.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(in_shape, dtype=dy.dtype)
    dx[:, :, :ho * size, :wo * size] = dwin.reshape(n, c, ho * size, wo * size)
    return dx


def softmax_xent_forward(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy; also returns the float64 softmax probabilities."""
    num_classes = logits.shape[1]
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for {logits.shape[0]} logits")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label outside class range [0, {num_classes})")
    z = _acc(logits)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z - logsum[:, None]
    loss = -logp[np.arange(len(labels)), labels].mean()
    return float(loss), np.exp(logp)


def softmax_xent_backward(probs, labels, dtype):
    d = probs.copy()
    d[np.arange(len(labels)), labels] -= 1.0
    return (d / len(labels)).astype(dtype)


# ---------------------------------------------------------------------------
# graph


@dataclass
class OpNode:
    """One step of the sequential graph.

    ``params`` names the weight-store entries the op reads (``weight``/``bias``);
    ``tap`` marks nodes whose output is recorded as the per-channel activation
    of network layer ``tap``.
    """

    kind: str
    params: dict[str, str] = field(default_factory=dict)
    stride: int = 1
    pad: int = 0
    size: int = 2
    tap: int | None = None

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {self.kind!r}")


@dataclass
class ForwardRecord:
    loss: float
    logits: np.ndarray
    # layer index -> [N, F, H, W] activations of every channel of that layer
    activations: dict[int, np.ndarray]
    graph: "Graph | None" = None

    def channel_activation(self, layer: int, channel: int) -> np.ndarray:
        return self.activations[layer][:, channel]


@dataclass
class GradRecord:
    weight_grads: dict[str, np.ndarray]
    activation_grads: dict[int, np.ndarray]

    def channel_activation_grad(self, layer: int, channel: int) -> np.ndarray:
        return self.activation_grads[layer][:, channel]


class Graph:
    """A sequential op list bound to one weight store.

    One graph instance evaluates a single batch at a time; ``backward`` uses
    the caches of the most recent ``forward``.
    """

    def __init__(self, nodes: list[OpNode], weights: dict[str, np.ndarray], dtype=np.float32):
        if not nodes or nodes[-1].kind != "softmax_xent":
            raise ValueError("graph must end with a softmax_xent node")
        self.nodes = nodes
        self.weights = weights
        self.dtype = np.dtype(dtype)
        self._cache: list | None = None
        self._labels = None
        self._probs = None

    def _w(self, node, key):
        return self.weights[node.params[key]].astype(self.dtype, copy=False)

    def logits(self, images: np.ndarray) -> np.ndarray:
        """Forward to the logits only (no caches, no loss)."""
        _counter.count += 1
        x = np.asarray(images).astype(self.dtype, copy=False)
        for node in self.nodes[:-1]:
            x, _ = self._step(node, x)
        return x

    def _step(self, node, x):
        k = node.kind
        if k == "conv2d":
            return conv2d_forward(x, self._w(node, "weight"), self._w(node, "bias"), node.stride, node.pad), None
        if k == "dense":
            return dense_forward(x, self._w(node, "weight"), self._w(node, "bias")), None
        if k == "relu":
            return relu_forward(x), None
        if k == "maxpool":
            return maxpool_forward(x, node.size)
        if k == "flatten":
            return x.reshape(x.shape[0], -1), None
        raise ValueError(k)

    def forward(self, images: np.ndarray, labels) -> ForwardRecord:
        _counter.count += 1
        x = np.asarray(images).astype(self.dtype, copy=False)
        labels = np.asarray(labels, dtype=np.int64)
        cache = []
        acts = {}
        for node in self.nodes[:-1]:
            y, aux = self._step(node, x)
            cache.append((x, aux))
            if node.tap is not None:
                acts[node.tap] = y
            x = y
        loss, probs = softmax_xent_forward(x, labels)
        self._cache, self._labels, self._probs = cache, labels, probs
        return ForwardRecord(loss=loss, logits=x, activations=acts, graph=self)

    def backward(self) -> GradRecord:
        if self._cache is None:
            raise RuntimeError("backward called before forward on this graph")
        dy = softmax_xent_backward(self._probs, self._labels, self.dtype)
        wgrads: dict[str, np.ndarray] = {}
        agrads: dict[int, np.ndarray] = {}
        for node, (x, aux) in zip(reversed(self.nodes[:-1]), reversed(self._cache)):
            if node.tap is not None:
                agrads[node.tap] = dy
            k = node.kind
            if k == "conv2d":
                dy, dw, db = conv2d_backward(dy, x, self._w(node, "weight"), node.stride, node.pad)
                wgrads[node.params["weight"]], wgrads[node.params["bias"]] = dw, db
            elif k == "dense":
                dy, dw, db = dense_backward(dy, x, self._w(node, "weight"))
                wgrads[node.params["weight"]], wgrads[node.params["bias"]] = dw, db
            elif k == "relu":
                dy = relu_backward(dy, x)
            elif k == "maxpool":
                dy = maxpool_backward(dy, aux, x.shape, node.size)
            elif k == "flatten":
                dy = dy.reshape(x.shape)
        self._cache = None
        return GradRecord(weight_grads=wgrads, activation_grads=agrads)


def backward(record: ForwardRecord) -> GradRecord:
    """Reverse-mode gradients for the graph that produced ``record``."""
    if record.graph is None:
        raise RuntimeError("record carries no graph; run forward first")
    return record.graph.backward()
