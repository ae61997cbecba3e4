"""SGD-with-momentum training and top-1 evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Batch, DatasetSplits, Split
from .network import NetworkDef, build_graph, clone_weights, init_weights

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    lr_decay_epochs: int = 8
    lr_decay_gamma: float = 0.2
    weight_decay: float = 5e-4

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f"invalid training config {self}")

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay_epochs <= 0:
            return self.lr
        return self.lr * self.lr_decay_gamma ** (epoch // self.lr_decay_epochs)


@dataclass
class TrainHistory:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)

    def plateaued(self, window: int = 3, tol: float = 0.01) -> bool:
        """True when test accuracy moved less than ``tol`` over the last ``window`` epochs."""
        if len(self.test_acc) < window:
            return False
        tail = self.test_acc[-window:]
        return max(tail) - min(tail) < tol

    def log_lines(self) -> list[str]:
        return [f"{e} {l:.6f} {a:.6f}" for e, l, a in zip(self.epochs, self.train_loss, self.test_acc)]


def sgd_step(weights, grads, velocity, lr, momentum, weight_decay=0.0):
    """In-place momentum SGD: v <- m*v + g (+ wd*w); w <- w - lr*v."""
    for name, g in grads.items():
        g = g.astype(np.float32)
        if weight_decay and name.endswith(".weight"):
            g = g + np.float32(weight_decay) * weights[name]
        v = velocity.setdefault(name, np.zeros_like(weights[name]))
        v *= np.float32(momentum)
        v += g
        weights[name] -= np.float32(lr) * v


def train(net: NetworkDef, splits: DatasetSplits, cfg: TrainConfig,
          weights: dict | None = None) -> tuple[dict, TrainHistory]:
    """Train from ``weights`` (He init from ``cfg.seed`` if omitted); deterministic for a seed."""
    if tuple(splits.image_shape) != tuple(net.input_shape):
        raise ValueError(f"dataset images {splits.image_shape} do not match network input {net.input_shape}")
    weights = init_weights(net, cfg.seed) if weights is None else clone_weights(weights)
    graph = build_graph(net, weights)
    rng = np.random.default_rng(cfg.seed + 1)
    velocity: dict = {}
    history = TrainHistory()
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        losses = []
        for batch in splits.train.batches(cfg.batch_size, rng.permutation(len(splits.train))):
            rec = graph.forward(batch.images, batch.labels)
            if not math.isfinite(rec.loss):
                raise DivergenceError(f"loss became {rec.loss} at epoch {epoch}; lower the learning rate")
            grads = graph.backward()
            sgd_step(weights, grads.weight_grads, velocity, lr, cfg.momentum, cfg.weight_decay)
            losses.append(rec.loss)
        acc = evaluate_top1(net, weights, splits.test)
        history.epochs.append(epoch)
        history.train_loss.append(float(np.mean(losses)))
        history.test_acc.append(acc)
        log.info("epoch %d lr %.4g loss %.4f test_acc %.4f", epoch, lr, history.train_loss[-1], acc)
    if history.plateaued():
        log.info("test accuracy plateaued over the last epochs")
    else:
        log.info("test accuracy still moving at the end of the epoch budget")
    return weights, history


def predict(net: NetworkDef, weights, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    graph = build_graph(net, weights)
    out = [graph.logits(images[s:s + batch_size]).argmax(axis=1) for s in range(0, len(images), batch_size)]
    return np.concatenate(out)


def evaluate_top1(net: NetworkDef, weights, testset: Split | Batch, batch_size: int = 500) -> float:
    """Fraction of examples whose argmax logit equals the label (ties go to the lowest class)."""
    if len(testset.labels) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    pred = predict(net, weights, testset.images, batch_size)
    return float(np.count_nonzero(pred == testset.labels)) / len(testset.labels)
