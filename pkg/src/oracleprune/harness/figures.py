"""Matplotlib renderings of pruning runs, written next to the summary files."""

from __future__ import annotations

import os
import warnings
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..saliency import COMPOSITE  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

STYLE = {
    "figure.dpi": 120,
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def figsize(scale=1.0, width_in=6.0):
    w = width_in * scale
    return (w, w * GOLDEN)


def _interp_curve(run, grid):
    # accuracy as a step function of removed %, starting at the unpruned point
    x = np.array([0.0] + [s.conv_removed_pct for s in run.trajectory.steps])
    y = np.array([run.trajectory.initial_test_acc] + [s.test_top1 for s in run.trajectory.steps])
    idx = np.searchsorted(x, grid, side="right") - 1
    out = y[np.clip(idx, 0, len(y) - 1)]
    out[grid > x[-1]] = np.nan
    return out


def plot_accuracy_curves(runs, net: str, path: str, drop: float) -> str:
    """Top-1 test accuracy against conv weights removed, one line per metric (composite solid)."""
    groups = defaultdict(list)
    for r in runs:
        if r.net == net and r.trajectory.steps:
            groups[(r.metric, r.k)].append(r)
    grid = np.linspace(0, 100, 401)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        for (metric, k), group in sorted(groups.items(), key=lambda kv: (kv[0][0] == COMPOSITE, kv[0])):
            curves = np.array([_interp_curve(r, grid) for r in group])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mean = np.nanmean(curves, axis=0)
                lo, hi = np.nanmin(curves, axis=0), np.nanmax(curves, axis=0)
            composite = metric == COMPOSITE
            label = f"{metric} (k={k})" if composite else metric
            line, = ax.plot(grid, 100 * mean, ls="-" if composite else "--", lw=1.6 if composite else 1.0,
                            label=label)
            if composite and len(group) > 1:
                ax.fill_between(grid, 100 * lo, 100 * hi, color=line.get_color(), alpha=0.15, lw=0)
        init = np.mean([r.trajectory.initial_test_acc for g in groups.values() for r in g])
        ax.axhline(100 * (init - drop), color="0.5", lw=0.7, ls=":")
        ax.set_xlabel("conv weights removed (%)")
        ax.set_ylabel("top-1 test accuracy (%)")
        ax.set_title(net)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_k_trend(rows, net: str, path: str) -> str | None:
    comp = [r for r in rows if r.net == net and r.metric == COMPOSITE]
    if not comp:
        return None
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.7))
        ks = [r.k for r in comp]
        err = [0.0 if r.half_width is None else r.half_width for r in comp]
        ax.errorbar(ks, [r.mean for r in comp], yerr=err, marker="o", capsize=3)
        best = max((r.mean for r in rows if r.net == net and r.metric != COMPOSITE), default=None)
        if best is not None:
            ax.axhline(best, color="0.5", ls="--", lw=0.8, label="best constituent")
            ax.legend(frameon=False)
        ax.set_xticks(ks)
        ax.set_xlabel("k")
        ax.set_ylabel("conv weights removed (%)")
        ax.set_title(net)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def render_all(runs, rows, out_dir: str, drop: float) -> list[str]:
    paths = []
    for net in sorted({r.net for r in runs}):
        paths.append(plot_accuracy_curves(runs, net, os.path.join(out_dir, f"{net}_accuracy.png"), drop))
        p = plot_k_trend(rows, net, os.path.join(out_dir, f"{net}_k_trend.png"))
        if p:
            paths.append(p)
    return paths
