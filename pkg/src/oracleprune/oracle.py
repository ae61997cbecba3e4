"""Myopic oracle: round-robin candidates from constituent rankings, measured sensitivity, argmin."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ValidationSample
from .network import ChannelId, ChannelParamSet, NetworkDef, build_graph, clone_weights, zero_channel
from .saliency import CONSTITUENTS, MetricKind


@dataclass(frozen=True)
class OracleConfig:
    k: int = 5
    constituents: tuple[MetricKind, ...] = CONSTITUENTS

    def __post_init__(self):
        object.__setattr__(self, "constituents", tuple(self.constituents))
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.constituents or len(set(self.constituents)) != len(self.constituents):
            raise ValueError(f"constituent list must be non-empty without duplicates: {self.constituents}")


@dataclass
class CandidateSet:
    channels: list[ChannelId] = field(default_factory=list)
    provenance: dict[ChannelId, MetricKind] = field(default_factory=dict)

    def __len__(self):
        return len(self.channels)


@dataclass(frozen=True)
class SensitivityRecord:
    channel: ChannelId
    delta_loss: float
    base_loss: float

    @property
    def pruned_loss(self) -> float:
        return self.base_loss + self.delta_loss


def select_candidates(rankings: dict[MetricKind, list[ChannelId]], cfg: OracleConfig) -> CandidateSet:
    """Visit constituents round-robin in ``cfg.constituents`` order; each visit
    adds that metric's lowest-ranked channel not already selected.

    A constituent whose ranking runs out is skipped. Selection stops as soon as
    ``min(k, number of ranked channels)`` channels are held.
    """
    order = [m for m in cfg.constituents if m in rankings]
    if not order or not any(rankings[m] for m in order):
        raise ValueError("no constituent rankings to select from")
    universe = set(rankings[order[0]])
    for m in order[1:]:
        if set(rankings[m]) != universe:
            raise ValueError(f"ranking for {m} covers a different channel set than {order[0]}")
    target = min(cfg.k, len(universe))
    cand = CandidateSet()
    pos = {m: 0 for m in order}
    while len(cand) < target:
        progressed = False
        for m in order:
            ranking = rankings[m]
            while pos[m] < len(ranking) and ranking[pos[m]] in cand.provenance:
                pos[m] += 1
            if pos[m] == len(ranking):
                continue
            c = ranking[pos[m]]
            cand.channels.append(c)
            cand.provenance[c] = m
            progressed = True
            if len(cand) == target:
                break
        if not progressed:
            break
    return cand


def sample_loss(net: NetworkDef, weights, sample: ValidationSample) -> float:
    """Mean loss over the sample's batches; one forward pass per batch."""
    graph = build_graph(net, weights)
    return float(np.mean([graph.forward(b.images, b.labels).loss for b in sample.batches]))


def sensitivity(net: NetworkDef, weights, pset: ChannelParamSet, sample: ValidationSample,
                base_loss: float | None = None) -> SensitivityRecord:
    """Loss with the channel's parameter set zeroed (on a clone) minus the intact loss."""
    if base_loss is None:
        base_loss = sample_loss(net, weights, sample)
    probe = zero_channel(clone_weights(weights), pset)
    pruned = sample_loss(net, probe, sample)
    return SensitivityRecord(pset.owner, pruned - base_loss, base_loss)


def oracle_choose(candidates: CandidateSet, records: list[SensitivityRecord]) -> ChannelId:
    """Candidate with the smallest loss increase; ties go to the lower (layer, channel)."""
    by_channel = {r.channel: r for r in records}
    missing = [c for c in candidates.channels if c not in by_channel]
    if missing or not candidates.channels:
        raise ValueError(f"missing sensitivity records for {missing or 'an empty candidate set'}")
    return min(candidates.channels, key=lambda c: (by_channel[c].delta_loss, c.layer_index, c.channel_index))


def forward_pass_budget(cfg: OracleConfig, n_val: int) -> int:
    """Candidate-evaluation forward passes per pruning step (base loss excluded)."""
    return cfg.k * n_val
