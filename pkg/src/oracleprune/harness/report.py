"""Summaries over stored trajectory CSVs: weights removed at an accuracy drop, with confidence intervals."""

from __future__ import annotations

import glob
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..pruning import PruneTrajectory, read_trajectory_csv, weights_removed_at_drop
from ..saliency import COMPOSITE, CONSTITUENTS


def mean_ci(values, level: float = 0.95) -> tuple[float, float | None]:
    """Mean and CI half-width; Student-t for n <= 30, normal beyond, ``None`` for n < 2."""
    x = np.asarray(values, dtype=np.float64)
    mean = float(x.mean())
    n = len(x)
    if n < 2:
        return mean, None
    q = stats.t.ppf(0.5 + level / 2, n - 1) if n <= 30 else stats.norm.ppf(0.5 + level / 2)
    return mean, float(q * x.std(ddof=1) / math.sqrt(n))


@dataclass
class RunFile:
    path: str
    net: str
    metric: str
    k: int
    seed: int
    trajectory: PruneTrajectory
    meta: dict


@dataclass
class SummaryRow:
    net: str
    metric: str
    k: int
    values: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return mean_ci(self.values)[0]

    @property
    def half_width(self) -> float | None:
        return mean_ci(self.values)[1]

    @property
    def label(self) -> str:
        return f"{COMPOSITE} k={self.k}" if self.metric == COMPOSITE else self.metric


def load_runs(in_dir) -> list[RunFile]:
    runs = []
    for path in sorted(glob.glob(os.path.join(in_dir, "*.csv"))):
        if os.path.basename(path).startswith("summary"):
            continue
        traj, meta = read_trajectory_csv(path)
        runs.append(RunFile(path, meta["net"], meta["metric"], int(meta["k"]), int(meta["seed"]), traj, meta))
    return runs


def metric_order(metric: str, k: int):
    names = [m.value for m in CONSTITUENTS]
    return (names.index(metric), 0) if metric in names else (len(names), k)


def summarize(runs: list[RunFile], drop: float) -> list[SummaryRow]:
    """One row per (net, metric, k); constituents in table order, then composite by ascending k."""
    rows: dict[tuple, SummaryRow] = {}
    for r in sorted(runs, key=lambda r: r.seed):
        if not r.trajectory.steps:
            continue
        row = rows.setdefault((r.net, r.metric, r.k), SummaryRow(r.net, r.metric, r.k))
        row.values.append(weights_removed_at_drop(r.trajectory, drop))
        row.seeds.append(r.seed)
    return sorted(rows.values(), key=lambda row: (row.net, metric_order(row.metric, row.k)))


def summary_csv(rows: list[SummaryRow], meta: dict) -> str:
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append("net,metric,k,n,mean_removed_pct,ci95_half_width,seeds")
    for r in rows:
        hw = "" if r.half_width is None else f"{r.half_width:.6f}"
        lines.append(f"{r.net},{r.metric},{r.k},{r.n},{r.mean:.6f},{hw},{' '.join(map(str, r.seeds))}")
    return "\n".join(lines) + "\n"


def summary_text(rows: list[SummaryRow], drop: float) -> str:
    head = ("net", "saliency metric", "n", f"conv weights removed (%) at {100 * drop:g}% drop")
    body = []
    notices = []
    for r in rows:
        if r.half_width is None:
            cell = f"{r.mean:.2f}"
            notices.append(f"{r.net} / {r.label}: fewer than 2 seeds, interval omitted")
        else:
            cell = f"{r.mean:.2f} ± {r.half_width:.2f}"
        body.append((r.net, r.label, str(r.n), cell))
    widths = [max(len(row[i]) for row in [head] + body) for i in range(4)]
    fmt = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
    out = [fmt(head), fmt(tuple("-" * w for w in widths))] + [fmt(b) for b in body]
    out += [f"note: {n}" for n in notices]
    return "\n".join(out) + "\n"
