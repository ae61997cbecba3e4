"""Sequential CNN definitions, channel parameter sets and weight accounting.

A network is described by a :class:`NetworkDef` (architecture only); its
parameters live in a separate *weight store*, a plain ``dict`` mapping
``"<layer>.weight"`` / ``"<layer>.bias"`` to float32 arrays. Pruning never
changes shapes: a pruned channel is one whose parameter set has been zeroed.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .tensor_core import Graph, OpNode, conv_output_hw

CHECKPOINT_MAGIC = "oracleprune-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Conv:
    filters: int
    kernel: int
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    size: int = 2


Layer = Union[Conv, Dense, ReLU, MaxPool]


class ChannelId(NamedTuple):
    layer_index: int
    channel_index: int

    def __str__(self):
        return f"({self.layer_index},{self.channel_index})"


@dataclass(frozen=True)
class NetworkDef:
    input_shape: tuple[int, int, int]
    num_classes: int
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not any(isinstance(l, Conv) for l in self.layers):
            raise ValueError("network needs at least one conv layer")
        last = self.layers[-1]
        if not isinstance(last, Dense) or last.units != self.num_classes:
            raise ValueError("last layer must be a Dense classifier with num_classes units")
        self.shapes()  # validates adjacency

    def shapes(self) -> list[tuple[int, ...]]:
        """Output shape (without batch axis) of every layer."""
        shape: tuple[int, ...] = self.input_shape
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: conv after a flattened layer")
                h, w = conv_output_hw(shape[1], shape[2], layer.kernel, layer.kernel, layer.stride, layer.pad)
                if h < 1 or w < 1:
                    raise ValueError(f"layer {i}: conv kernel {layer.kernel} too large for {shape}")
                shape = (layer.filters, h, w)
            elif isinstance(layer, MaxPool):
                if len(shape) != 3 or shape[1] < layer.size or shape[2] < layer.size:
                    raise ValueError(f"layer {i}: cannot pool {shape} by {layer.size}")
                shape = (shape[0], shape[1] // layer.size, shape[2] // layer.size)
            elif isinstance(layer, Dense):
                shape = (layer.units,)
            out.append(shape)
        return out

    def input_shape_of(self, layer_index: int) -> tuple[int, ...]:
        return self.input_shape if layer_index == 0 else self.shapes()[layer_index - 1]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for i, layer in enumerate(self.layers):
            src = self.input_shape_of(i)
            if isinstance(layer, Conv):
                shapes[f"{i}.weight"] = (layer.filters, src[0], layer.kernel, layer.kernel)
                shapes[f"{i}.bias"] = (layer.filters,)
            elif isinstance(layer, Dense):
                shapes[f"{i}.weight"] = (layer.units, int(np.prod(src)))
                shapes[f"{i}.bias"] = (layer.units,)
        return shapes

    def num_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    def conv_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if isinstance(l, Conv)]

    def weighted_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if isinstance(l, (Conv, Dense))]


def init_weights(net: NetworkDef, seed: int) -> dict[str, np.ndarray]:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    store = {}
    for name, shape in net.param_shapes().items():
        if name.endswith(".bias"):
            store[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            store[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
    return store


def clone_weights(weights: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in weights.items()}


def build_graph(net: NetworkDef, weights: dict[str, np.ndarray], dtype=np.float32) -> Graph:
    nodes: list[OpNode] = []
    flat = False
    for i, layer in enumerate(net.layers):
        p = {"weight": f"{i}.weight", "bias": f"{i}.bias"}
        if isinstance(layer, Conv):
            nodes.append(OpNode("conv2d", p, stride=layer.stride, pad=layer.pad))
            nxt = net.layers[i + 1] if i + 1 < len(net.layers) else None
            if not isinstance(nxt, ReLU):
                nodes[-1].tap = i
        elif isinstance(layer, ReLU):
            tap = i - 1 if i > 0 and isinstance(net.layers[i - 1], Conv) else None
            nodes.append(OpNode("relu", tap=tap))
        elif isinstance(layer, MaxPool):
            nodes.append(OpNode("maxpool", size=layer.size))
        elif isinstance(layer, Dense):
            if not flat:
                nodes.append(OpNode("flatten"))
                flat = True
            nodes.append(OpNode("dense", p))
    nodes.append(OpNode("softmax_xent"))
    return Graph(nodes, weights, dtype=dtype)


# ---------------------------------------------------------------------------
# channels


def enumerate_channels(net: NetworkDef) -> list[ChannelId]:
    """Every conv output channel of the network, in (layer, channel) order."""
    return [ChannelId(i, c) for i in net.conv_layers() for c in range(net.layers[i].filters)]


@dataclass(frozen=True)
class ChannelParamSet:
    """The parameters that must go to remove one channel and keep a dense network.

    ``slices`` holds ``(tensor name, index)`` pairs; each index is a tuple
    usable directly on the named array.
    """

    owner: ChannelId
    slices: tuple[tuple[str, tuple], ...]

    def size(self, weights) -> int:
        return sum(int(weights[name][idx].size) for name, idx in self.slices)

    def own_slices(self):
        own = f"{self.owner.layer_index}."
        return [(n, idx) for n, idx in self.slices if n.startswith(own)]


def consumer_of(net: NetworkDef, layer_index: int) -> int:
    for j in range(layer_index + 1, len(net.layers)):
        if isinstance(net.layers[j], (Conv, Dense)):
            return j
    raise ValueError(f"layer {layer_index} has no consuming layer")


def channel_param_set(net: NetworkDef, c: ChannelId) -> ChannelParamSet:
    i, ch = c
    if not (0 <= i < len(net.layers)) or not isinstance(net.layers[i], (Conv, Dense)):
        raise ValueError(f"{c} is not a channel of a conv or dense layer")
    if i == len(net.layers) - 1:
        raise ValueError(f"{c} belongs to the classifier layer; pruning it removes a class")
    layer = net.layers[i]
    width = layer.filters if isinstance(layer, Conv) else layer.units
    if not 0 <= ch < width:
        raise ValueError(f"channel {ch} out of range for layer {i} with {width} channels")
    slices = [(f"{i}.weight", (ch,)), (f"{i}.bias", (ch,))]
    j = consumer_of(net, i)
    if isinstance(net.layers[j], Conv):
        slices.append((f"{j}.weight", (slice(None), ch)))
    else:
        src = net.input_shape_of(j)
        per_channel = int(np.prod(src[1:])) if len(src) == 3 else 1
        slices.append((f"{j}.weight", (slice(None), slice(ch * per_channel, (ch + 1) * per_channel))))
    return ChannelParamSet(owner=c, slices=tuple(slices))


def zero_channel(weights: dict[str, np.ndarray], pset: ChannelParamSet) -> dict[str, np.ndarray]:
    """Set every parameter of ``pset`` to 0.0 in place; returns the same store."""
    for name, idx in pset.slices:
        weights[name][idx] = 0.0
    return weights


def is_channel_nonzero(weights: dict[str, np.ndarray], pset: ChannelParamSet) -> bool:
    return any(np.any(weights[name][idx] != 0) for name, idx in pset.slices)


def conv_weight_stats(weights: dict[str, np.ndarray], net: NetworkDef | None = None) -> dict:
    """Totals over conv weight tensors (4-d ``*.weight``); biases and dense layers excluded."""
    if net is not None:
        names = [f"{i}.weight" for i in net.conv_layers()]
    else:
        names = [n for n, v in weights.items() if n.endswith(".weight") and v.ndim == 4]
    total = sum(int(weights[n].size) for n in names)
    nonzero = sum(int(np.count_nonzero(weights[n])) for n in names)
    removed = 100.0 * (1.0 - nonzero / total) if total else 0.0
    return {"total_conv_weights": total, "nonzero_conv_weights": nonzero, "removed_pct": removed}


# ---------------------------------------------------------------------------
# architectures


def convnet2(input_shape, num_classes, widths=(8, 16)) -> NetworkDef:
    """Two 3x3 conv blocks with 2x2 pooling and a linear classifier."""
    layers: list[Layer] = []
    for w in widths:
        layers += [Conv(w, 3, pad=1), ReLU(), MaxPool(2)]
    layers.append(Dense(num_classes))
    return NetworkDef(tuple(input_shape), num_classes, tuple(layers))


def lenet(input_shape, num_classes) -> NetworkDef:
    """LeNet-5-shaped: conv 6@5x5, pool, conv 16@5x5, pool, classifier."""
    layers = (Conv(6, 5), ReLU(), MaxPool(2), Conv(16, 5), ReLU(), MaxPool(2), Dense(num_classes))
    return NetworkDef(tuple(input_shape), num_classes, layers)


def convnet3(input_shape, num_classes) -> NetworkDef:
    layers = (Conv(8, 3, pad=1), ReLU(), Conv(8, 3, pad=1), ReLU(), MaxPool(2),
              Conv(16, 3, pad=1), ReLU(), MaxPool(2), Dense(num_classes))
    return NetworkDef(tuple(input_shape), num_classes, layers)


ARCHITECTURES = {"convnet2": convnet2, "lenet": lenet, "convnet3": convnet3}


def build_architecture(name: str, input_shape, num_classes) -> NetworkDef:
    try:
        return ARCHITECTURES[name](input_shape, num_classes)
    except KeyError:
        raise ValueError(f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}") from None


# ---------------------------------------------------------------------------
# checkpoints


def _layer_line(layer: Layer) -> str:
    if isinstance(layer, Conv):
        return f"layer conv {layer.filters} {layer.kernel} {layer.stride} {layer.pad}"
    if isinstance(layer, Dense):
        return f"layer dense {layer.units}"
    if isinstance(layer, ReLU):
        return "layer relu"
    return f"layer maxpool {layer.size}"


def _parse_layer(fields: list[str]) -> Layer:
    kind, args = fields[0], [int(a) for a in fields[1:]]
    if kind == "conv":
        return Conv(*args)
    if kind == "dense":
        return Dense(*args)
    if kind == "relu":
        return ReLU()
    if kind == "maxpool":
        return MaxPool(*args)
    raise ValueError(f"unknown layer kind {kind!r} in checkpoint")


def save_checkpoint(path, net: NetworkDef, weights: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Plain-text header followed by little-endian float32 blobs in declaration order.

    Written to a temporary file first and renamed into place.
    """
    shapes = net.param_shapes()
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
             "input " + " ".join(map(str, net.input_shape)),
             f"classes {net.num_classes}"]
    for k, v in sorted((meta or {}).items()):
        lines.append(f"meta {k} {v}")
    lines += [_layer_line(l) for l in net.layers]
    for name, shape in shapes.items():
        if weights[name].shape != shape:
            raise ValueError(f"{name}: shape {weights[name].shape} != {shape}")
        lines.append(f"tensor {name} " + " ".join(map(str, shape)))
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(header)
        for name in shapes:
            fh.write(np.ascontiguousarray(weights[name], dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[NetworkDef, dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"\nend\n")
    if end < 0:
        raise ValueError(f"{path}: missing checkpoint header terminator")
    header = raw[:end].decode("ascii").splitlines()
    magic = header[0].split()
    if magic[0] != CHECKPOINT_MAGIC or int(magic[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    input_shape, num_classes, layers, tensors, meta = None, None, [], [], {}
    for line in header[1:]:
        f = line.split()
        if f[0] == "input":
            input_shape = tuple(int(x) for x in f[1:])
        elif f[0] == "classes":
            num_classes = int(f[1])
        elif f[0] == "meta":
            meta[f[1]] = " ".join(f[2:])
        elif f[0] == "layer":
            layers.append(_parse_layer(f[1:]))
        elif f[0] == "tensor":
            tensors.append((f[1], tuple(int(x) for x in f[2:])))
    net = NetworkDef(input_shape, num_classes, tuple(layers))
    offset = end + len(b"\nend\n")
    weights = {}
    for name, shape in tensors:
        n = int(np.prod(shape))
        weights[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).astype(np.float32).reshape(shape)
        offset += 4 * n
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes after tensor data")
    return net, weights, meta
