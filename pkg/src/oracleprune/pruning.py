"""Iterative one-channel-at-a-time pruning without fine-tuning.

Each step re-scores the current (partially pruned) network, zeroes the
chosen channel's parameter set and measures top-1 on the full test set. The
run stops after the first step whose accuracy falls below
``initial - max_test_acc_drop``; that step is kept in the trajectory.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Callable

from .data import DatasetSplits, ValidationSample, sample_validation
from .network import (ChannelId, NetworkDef, channel_param_set, clone_weights, conv_weight_stats,
                      zero_channel)
from .oracle import OracleConfig, oracle_choose, sample_loss, select_candidates, sensitivity
from .saliency import (COMPOSITE, CONSTITUENTS, MetricKind, collect_stats, compute_saliency, rank_scores,
                       unpruned_channels)
from .training import evaluate_top1

log = logging.getLogger(__name__)

# accuracies are multiples of 1/|test set|; this only absorbs float round-off at exact equality
ACC_TOL = 1e-6

CSV_COLUMNS = ("step", "layer", "channel", "winning_metric", "conv_removed_pct", "test_top1", "val_loss")


class ChannelsExhausted(RuntimeError):
    pass


@dataclass
class PruneConfig:
    metric: MetricKind | str = COMPOSITE
    oracle: OracleConfig = field(default_factory=OracleConfig)
    max_test_acc_drop: float = 0.05
    seed: int = 0
    val_images: int = 256
    val_batch: int = 32

    def __post_init__(self):
        if not 0.0 <= self.max_test_acc_drop <= 1.0:
            raise ValueError(f"max_test_acc_drop must lie in [0, 1], got {self.max_test_acc_drop}")
        if self.metric != COMPOSITE and not isinstance(self.metric, MetricKind):
            raise ValueError(f"unknown metric {self.metric!r}")

    @property
    def composite(self) -> bool:
        return self.metric == COMPOSITE

    @property
    def label(self) -> str:
        return COMPOSITE if self.composite else self.metric.value

    @property
    def k(self) -> int:
        return self.oracle.k if self.composite else 0


@dataclass
class StepRecord:
    step: int
    channel: ChannelId
    winning_metric: str
    conv_removed_pct: float
    test_top1: float
    val_loss: float


@dataclass
class PruneTrajectory:
    initial_test_acc: float
    steps: list[StepRecord] = field(default_factory=list)
    stop_reason: str = ""
    initial_val_loss: float | None = None


@dataclass
class StepResult:
    channel: ChannelId
    winning_metric: str
    val_loss_after: float | None
    audit: dict


def prune_step(net: NetworkDef, weights, cfg: PruneConfig, sample: ValidationSample) -> StepResult:
    """Choose one channel and zero its parameter set in ``weights`` (in place)."""
    channels = unpruned_channels(net, weights)
    if not channels:
        raise ChannelsExhausted("no prunable channel with non-zero parameters left")
    if cfg.composite:
        stats = collect_stats(net, weights, sample)
        base = stats.mean_loss
        rankings = {m: rank_scores(compute_saliency(m, net, weights, stats, channels).scores)
                    for m in cfg.oracle.constituents}
        cand = select_candidates(rankings, cfg.oracle)
        records = [sensitivity(net, weights, channel_param_set(net, c), sample, base_loss=base)
                   for c in cand.channels]
        chosen = oracle_choose(cand, records)
        winner = cand.provenance[chosen].value
        after = next(r.pruned_loss for r in records if r.channel == chosen)
        audit = {"base_loss": base,
                 "candidates": [{"layer": c.layer_index, "channel": c.channel_index,
                                 "metric": cand.provenance[c].value} for c in cand.channels],
                 "deltas": [r.delta_loss for r in records]}
    else:
        stats = None if cfg.metric.static else collect_stats(net, weights, sample)
        scores = compute_saliency(cfg.metric, net, weights, stats, channels).scores
        chosen = rank_scores(scores)[0]
        winner, after = cfg.metric.value, None
        audit = {"score": scores[chosen]}
    zero_channel(weights, channel_param_set(net, chosen))
    audit.update(chosen={"layer": chosen.layer_index, "channel": chosen.channel_index}, winning_metric=winner)
    return StepResult(chosen, winner, after, audit)


def run_pruning(net: NetworkDef, weights, cfg: PruneConfig, splits: DatasetSplits,
                sample: ValidationSample | None = None,
                on_step: Callable[[StepRecord, dict, dict], None] | None = None) -> PruneTrajectory:
    """Prune a copy of ``weights`` until the accuracy budget is exceeded or no channel is left.

    ``on_step(record, weights, audit)`` is called after every step with the
    current weight store.
    """
    weights = clone_weights(weights)
    if sample is None:
        sample = sample_validation(splits, cfg.val_images, cfg.val_batch, cfg.seed)
    initial = evaluate_top1(net, weights, splits.test)
    traj = PruneTrajectory(initial_test_acc=initial, initial_val_loss=sample_loss(net, weights, sample))
    threshold = initial - cfg.max_test_acc_drop
    step = 0
    while True:
        try:
            res = prune_step(net, weights, cfg, sample)
        except ChannelsExhausted:
            traj.stop_reason = "exhausted"
            break
        step += 1
        acc = evaluate_top1(net, weights, splits.test)
        val_loss = res.val_loss_after if res.val_loss_after is not None else sample_loss(net, weights, sample)
        rec = StepRecord(step, res.channel, res.winning_metric,
                         conv_weight_stats(weights, net)["removed_pct"], acc, val_loss)
        traj.steps.append(rec)
        res.audit["step"] = step
        log.debug("step %d pruned %s (%s) removed %.2f%% acc %.4f",
                  step, res.channel, res.winning_metric, rec.conv_removed_pct, acc)
        if on_step is not None:
            on_step(rec, weights, res.audit)
        if acc < threshold - ACC_TOL:
            traj.stop_reason = "accuracy"
            break
    return traj


def weights_removed_at_drop(traj: PruneTrajectory, drop: float) -> float:
    """Largest conv-weights-removed % among steps still within ``drop`` of the initial accuracy."""
    if not traj.steps:
        raise ValueError("empty trajectory")
    ok = [r.conv_removed_pct for r in traj.steps if r.test_top1 >= traj.initial_test_acc - drop - ACC_TOL]
    return max(ok) if ok else 0.0


# ---------------------------------------------------------------------------
# CSV trajectory files


def trajectory_to_csv(traj: PruneTrajectory, meta: dict) -> str:
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}={v}\n")
    buf.write(f"# initial_test_top1={traj.initial_test_acc:.6f}\n")
    if traj.initial_val_loss is not None:
        buf.write(f"# initial_val_loss={traj.initial_val_loss:.6f}\n")
    buf.write(f"# stop_reason={traj.stop_reason}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in traj.steps:
        w.writerow([r.step, r.channel.layer_index, r.channel.channel_index, r.winning_metric,
                    f"{r.conv_removed_pct:.6f}", f"{r.test_top1:.6f}", f"{r.val_loss:.6f}"])
    return buf.getvalue()


def read_trajectory_csv(path) -> tuple[PruneTrajectory, dict[str, str]]:
    meta: dict[str, str] = {}
    rows = []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        elif line:
            body.append(line)
    reader = csv.DictReader(body)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
    for row in reader:
        rows.append(StepRecord(int(row["step"]), ChannelId(int(row["layer"]), int(row["channel"])),
                               row["winning_metric"], float(row["conv_removed_pct"]),
                               float(row["test_top1"]), float(row["val_loss"])))
    traj = PruneTrajectory(float(meta["initial_test_top1"]), rows, meta.get("stop_reason", ""),
                           float(meta["initial_val_loss"]) if "initial_val_loss" in meta else None)
    return traj, meta


def audit_line(audit: dict) -> str:
    return json.dumps(audit, sort_keys=True)


__all__ = [
    "ACC_TOL", "CONSTITUENTS", "ChannelsExhausted", "PruneConfig", "PruneTrajectory", "StepRecord",
    "prune_step", "read_trajectory_csv", "run_pruning",
    "trajectory_to_csv", "weights_removed_at_drop",
]
