"""The five constituent channel-saliency metrics and channel ranking.

Lower scores mean less important channels (pruned first). The activation
and gradient based metrics aggregate over every element of a channel's
activations across all positions, images and validation batches: one global
sum per channel, then normalisation or absolute value.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .data import ValidationSample
from .network import (ChannelId, NetworkDef, build_graph, channel_param_set,
                      enumerate_channels, is_channel_nonzero)


class MetricKind(enum.Enum):
    MEAN_SQ_WEIGHTS = "mean-sq-weights"
    MEAN_ACTIVATIONS = "mean-activations"
    AVG_GRADIENTS = "avg-gradients"
    TAYLOR1 = "taylor1"
    FISHER2 = "fisher2"

    def __str__(self):
        return self.value

    @property
    def static(self) -> bool:
        return self is MetricKind.MEAN_SQ_WEIGHTS


CONSTITUENTS = tuple(MetricKind)
COMPOSITE = "composite"
METRIC_NAMES = tuple(m.value for m in MetricKind) + (COMPOSITE,)


def parse_metric(name: str):
    """CLI string -> MetricKind, or the string ``"composite"``."""
    if name == COMPOSITE:
        return COMPOSITE
    try:
        return MetricKind(name)
    except ValueError:
        raise ValueError(f"unknown metric {name!r}; valid names: {', '.join(METRIC_NAMES)}") from None


# ---------------------------------------------------------------------------
# per-channel formulas on raw values


def mean_sq_weights_score(w) -> float:
    w = np.asarray(w, dtype=np.float64)
    return float(np.sum(w * w) / w.size)


def mean_activation_score(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sum(a) / a.size)


def avg_gradient_score(g) -> float:
    g = np.asarray(g, dtype=np.float64)
    return float(abs(np.sum(g)) / g.size)


def taylor1_score(a, g) -> float:
    a, g = np.asarray(a, dtype=np.float64), np.asarray(g, dtype=np.float64)
    return float(abs(np.sum(a * g)) / a.size)


def fisher2_score(a, g) -> float:
    a, g = np.asarray(a, dtype=np.float64), np.asarray(g, dtype=np.float64)
    return float(0.5 * np.sum(a * g) ** 2)


# ---------------------------------------------------------------------------
# statistics gathered from one forward/backward sweep over the validation sample


@dataclass
class SampleStats:
    """Per-channel sums over a validation sample, plus the batch losses.

    ``act_sum[l][f]`` is the sum of every activation of channel ``f`` in
    layer ``l``; ``grad_sum`` and ``prod_sum`` likewise for dL/da and a*dL/da.
    ``count[l]`` is the element count of one channel's aggregate.
    """

    act_sum: dict[int, np.ndarray] = field(default_factory=dict)
    grad_sum: dict[int, np.ndarray] = field(default_factory=dict)
    prod_sum: dict[int, np.ndarray] = field(default_factory=dict)
    count: dict[int, int] = field(default_factory=dict)
    batch_losses: list[float] = field(default_factory=list)
    sample_seed: int | None = None

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.batch_losses))

    def add(self, layer, a, g):
        a64, g64 = a.astype(np.float64), g.astype(np.float64)
        axes = (0, 2, 3) if a.ndim == 4 else (0,)
        for store, val in ((self.act_sum, a64.sum(axis=axes)), (self.grad_sum, g64.sum(axis=axes)),
                           (self.prod_sum, (a64 * g64).sum(axis=axes))):
            store[layer] = store.get(layer, 0.0) + val
        self.count[layer] = self.count.get(layer, 0) + a.size // a.shape[1]


def collect_stats(net: NetworkDef, weights, sample: ValidationSample) -> SampleStats:
    """One forward and one backward pass per validation batch."""
    graph = build_graph(net, weights)
    stats = SampleStats(sample_seed=sample.seed)
    for batch in sample.batches:
        rec = graph.forward(batch.images, batch.labels)
        grads = graph.backward()
        stats.batch_losses.append(rec.loss)
        for layer in net.conv_layers():
            stats.add(layer, rec.activations[layer], grads.activation_grads[layer])
    return stats


def own_weights(net: NetworkDef, weights, c: ChannelId) -> np.ndarray:
    """Filter weights and bias of channel ``c`` in its own layer, flattened."""
    i, ch = c
    return np.concatenate([weights[f"{i}.weight"][ch].ravel(), weights[f"{i}.bias"][ch:ch + 1]])


def mean_sq_weights(net: NetworkDef, weights, c: ChannelId) -> float:
    return mean_sq_weights_score(own_weights(net, weights, c))


def mean_activations(stats: SampleStats, c: ChannelId) -> float:
    return float(stats.act_sum[c.layer_index][c.channel_index] / stats.count[c.layer_index])


def avg_gradients(stats: SampleStats, c: ChannelId) -> float:
    return float(abs(stats.grad_sum[c.layer_index][c.channel_index]) / stats.count[c.layer_index])


def taylor_first(stats: SampleStats, c: ChannelId) -> float:
    return float(abs(stats.prod_sum[c.layer_index][c.channel_index]) / stats.count[c.layer_index])


def fisher_second(stats: SampleStats, c: ChannelId) -> float:
    return float(0.5 * stats.prod_sum[c.layer_index][c.channel_index] ** 2)


def channel_score(metric: MetricKind, net, weights, stats: SampleStats | None, c: ChannelId) -> float:
    if metric is MetricKind.MEAN_SQ_WEIGHTS:
        return mean_sq_weights(net, weights, c)
    if stats is None:
        raise ValueError(f"{metric} needs validation-sample statistics")
    fn = {MetricKind.MEAN_ACTIVATIONS: mean_activations, MetricKind.AVG_GRADIENTS: avg_gradients,
          MetricKind.TAYLOR1: taylor_first, MetricKind.FISHER2: fisher_second}[metric]
    return fn(stats, c)


@dataclass
class SaliencyVector:
    metric: MetricKind
    scores: dict[ChannelId, float]
    sample_seed: int | None = None


def unpruned_channels(net: NetworkDef, weights) -> list[ChannelId]:
    return [c for c in enumerate_channels(net) if is_channel_nonzero(weights, channel_param_set(net, c))]


def compute_saliency(metric: MetricKind, net, weights, stats: SampleStats | None,
                     channels: list[ChannelId] | None = None) -> SaliencyVector:
    channels = unpruned_channels(net, weights) if channels is None else channels
    if not channels:
        raise ValueError("no unpruned channels to score")
    scores = {c: channel_score(metric, net, weights, stats, c) for c in channels}
    bad = [c for c, s in scores.items() if not np.isfinite(s)]
    if bad:
        raise FloatingPointError(f"{metric}: non-finite saliency for channels {bad}")
    return SaliencyVector(metric, scores, None if stats is None else stats.sample_seed)


def rank_scores(scores: dict[ChannelId, float]) -> list[ChannelId]:
    """Ascending by score; ties broken by (layer, channel)."""
    return sorted(scores, key=lambda c: (scores[c], c.layer_index, c.channel_index))


def rank_channels(metric: MetricKind, net, weights, sample: ValidationSample | SampleStats | None = None
                  ) -> list[ChannelId]:
    """Unpruned channels in ascending saliency order (already-pruned channels excluded)."""
    stats = collect_stats(net, weights, sample) if isinstance(sample, ValidationSample) else sample
    return rank_scores(compute_saliency(metric, net, weights, stats).scores)
