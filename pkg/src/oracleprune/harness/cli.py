"""Command-line entry point: ``train``, ``prune`` and ``compare``.

Exit codes: 0 success, 2 usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import tempfile

from .. import __version__
from ..network import load_checkpoint, save_checkpoint
from ..pruning import audit_line, run_pruning, trajectory_to_csv
from ..saliency import COMPOSITE, METRIC_NAMES
from ..training import train
from . import figures
from .config import ExperimentConfig, UsageError
from .report import load_runs, summarize, summary_csv, summary_text

log = logging.getLogger("oracleprune")

EXIT_USAGE = 2
EXIT_RUNTIME = 3


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def sha256_file(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def run_metadata(cfg: ExperimentConfig, **extra) -> dict:
    meta = {"version": f"oracleprune {__version__}"}
    meta.update({f"config.{k}": v for k, v in cfg.items()})
    meta.update(extra)
    return meta


def cmd_train(cfg: ExperimentConfig, out: str, seed: int | None = None) -> str:
    splits = cfg.load_data()
    net = cfg.network(splits)
    tcfg = cfg.train_config(seed)
    weights, history = train(net, splits, tcfg)
    os.makedirs(out, exist_ok=True)
    ckpt = os.path.join(out, f"{cfg.name}.ckpt")
    meta = run_metadata(cfg, train_seed_used=tcfg.seed)
    save_checkpoint(ckpt, net, weights, {k.replace(" ", "_"): str(v).replace(" ", "_") for k, v in meta.items()})
    header = "".join(f"# {k}={v}\n" for k, v in meta.items())
    write_atomic(os.path.join(out, f"{cfg.name}_train.log"),
                 header + "# epoch loss test_acc\n" + "\n".join(history.log_lines()) + "\n")
    print(f"final test accuracy {history.test_acc[-1]:.4f}  checkpoint {ckpt}")
    return ckpt


def run_filename(net: str, metric: str, k: int, seed: int) -> str:
    return f"{net}_{metric}_{k}_{seed}"


def cmd_prune(cfg: ExperimentConfig, checkpoint: str, metric: str, out: str, k: int | None = None,
              max_acc_drop: float | None = None, seed: int | None = None) -> list[str]:
    if metric not in METRIC_NAMES:
        raise UsageError(f"--metric: unknown metric {metric!r}; valid names: {', '.join(METRIC_NAMES)}")
    if not os.path.exists(checkpoint):
        raise UsageError(f"--checkpoint: file not found: {checkpoint}")
    k = (k if k is not None else cfg.ks[0]) if metric == COMPOSITE else 0
    if metric == COMPOSITE and k < 1:
        raise UsageError("--k must be >= 1")
    if max_acc_drop is not None and not 0.0 <= max_acc_drop <= 1.0:
        raise UsageError("--max-acc-drop must lie in [0, 1]")
    net, weights, _ = load_checkpoint(checkpoint)
    splits = cfg.load_data()
    if tuple(splits.image_shape) != net.input_shape or splits.num_classes != net.num_classes:
        raise UsageError(f"--checkpoint: network {net.input_shape}/{net.num_classes} classes does not match "
                         f"the configured dataset {splits.image_shape}/{splits.num_classes}")
    seeds = [seed] if seed is not None else [cfg.val_seed + r for r in range(cfg.replications)]
    ck_hash = sha256_file(checkpoint)
    written = []
    for s in seeds:
        pcfg = cfg.prune_config(metric, max(k, 1), s, max_acc_drop)
        audit = []
        traj = run_pruning(net, weights, pcfg, splits, on_step=lambda rec, w, a: audit.append(audit_line(a)))
        stem = os.path.join(out, run_filename(cfg.name, metric, k, s))
        meta = run_metadata(cfg, net=cfg.name, metric=metric, k=k, seed=s,
                            max_acc_drop=pcfg.max_test_acc_drop, checkpoint_sha256=ck_hash)
        write_atomic(stem + ".csv", trajectory_to_csv(traj, meta))
        write_atomic(stem + ".audit.jsonl", "".join(line + "\n" for line in audit))
        log.info("%s: %d steps, stop=%s", stem, len(traj.steps), traj.stop_reason)
        written.append(stem + ".csv")
    return written


def cmd_compare(cfg: ExperimentConfig, in_dir: str, out: str, drop: float = 0.05) -> list:
    if not os.path.isdir(in_dir):
        raise UsageError(f"--in: directory not found: {in_dir}")
    runs = load_runs(in_dir)
    if not runs:
        raise UsageError(f"--in: no trajectory CSVs in {in_dir}")
    rows = summarize(runs, drop)
    meta = run_metadata(cfg, drop=drop, inputs=len(runs))
    os.makedirs(out, exist_ok=True)
    write_atomic(os.path.join(out, "summary.csv"), summary_csv(rows, meta))
    text = summary_text(rows, drop)
    write_atomic(os.path.join(out, "summary.txt"), "".join(f"# {k}={v}\n" for k, v in meta.items()) + text)
    figures.render_all(runs, rows, out, drop)
    print(text, end="")
    return rows


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oracleprune", description="Channel pruning with composed saliency metrics")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network and save a checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)

    r = sub.add_parser("prune", help="prune a checkpoint with one metric")
    r.add_argument("--config", required=True)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--metric", required=True, help=f"one of: {', '.join(METRIC_NAMES)}")
    r.add_argument("--k", type=int)
    r.add_argument("--max-acc-drop", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)

    c = sub.add_parser("compare", help="summarize trajectories at an accuracy drop")
    c.add_argument("--config", required=True)
    c.add_argument("--in", dest="in_dir", required=True)
    c.add_argument("--drop", type=float, default=0.05)
    c.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.from_file(args.config)
        if args.command == "train":
            cmd_train(cfg, args.out, args.seed)
        elif args.command == "prune":
            cmd_prune(cfg, args.checkpoint, args.metric, args.out, args.k, args.max_acc_drop, args.seed)
        else:
            cmd_compare(cfg, args.in_dir, args.out, args.drop)
    except UsageError as e:
        print(f"oracleprune {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"oracleprune {args.command}: failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
